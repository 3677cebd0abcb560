import json
import math

import numpy as np
import pytest

from roofkit import io as rio
from roofkit.model import CH_BG, CH_LR, Facet, PrimitiveType, RoofModel, RoofPrimitive
from roofkit.raster import (
    composite_roof,
    extract_facet_polygons,
    graph_to_model,
    rasterize_graph,
    rasterize_primitive,
)
from roofkit.sampler import SamplerConfig, sample_graphs


@pytest.fixture(scope="module")
def graphs():
    return sample_graphs(30, SamplerConfig(seed=31))


class TestGraphJson:
    def test_round_trip(self, graphs, tmp_path):
        for k, g in enumerate(graphs):
            assert rio.loads_graph(rio.dumps_graph(g)) == g
            assert rio.read_graph(rio.write_graph(g, tmp_path / f"g{k}.json")) == g

    def test_floats_exact(self):
        p = RoofPrimitive(0.1, 1 / 3, 7.000000000000001, 9.2, PrimitiveType.VERTICAL_HIP, math.pi / 7, 0.123456789012345)
        assert rio.primitive_from_dict(json.loads(json.dumps(rio.primitive_to_dict(p)))) == p

    def test_primitive_file(self, tmp_path):
        p = RoofPrimitive(1, 2, 10, 12, PrimitiveType.HORIZONTAL_GABLE, 0.0, 0.5)
        assert rio.read_primitive(rio.write_primitive(p, tmp_path / "p.json")) == p

    def test_bad_json(self, tmp_path):
        f = tmp_path / "bad.json"
        f.write_text("{not json")
        with pytest.raises(rio.FormatError):
            rio.read_graph(f)

    def test_missing_field(self, graphs):
        d = rio.graph_to_dict(graphs[0])
        del d["primitives"][0]["type"]
        with pytest.raises(rio.FormatError):
            rio.graph_from_dict(d)

    def test_missing_file(self, tmp_path):
        with pytest.raises(rio.FormatError):
            rio.read_graph(tmp_path / "nope.json")


class TestModelJson:
    def test_round_trip(self, graphs, tmp_path):
        for k, g in enumerate(graphs[:10]):
            m = graph_to_model(g)
            assert rio.read_model(rio.write_model(m, tmp_path / f"m{k}.json")) == m

    def test_top_level_list(self, graphs, tmp_path):
        path = rio.write_model(graph_to_model(graphs[0]), tmp_path / "m.json")
        data = json.loads(path.read_text())
        assert isinstance(data, list) and set(data[0]) == {"vertices", "plane_angle"}

    def test_model_dir_sorted_skips_manifest(self, graphs, tmp_path):
        for k in (2, 0, 1):
            rio.write_model(graph_to_model(graphs[k]), tmp_path / f"m{k}.json")
        rio.write_manifest(rio.build_manifest("sample"), tmp_path / rio.MANIFEST_NAME)
        names = [n for n, _ in rio.read_model_dir(tmp_path)]
        assert names == ["m0", "m1", "m2"]


class TestRasterFiles:
    def test_npz_round_trip(self, graphs, tmp_path):
        comp = composite_roof(rasterize_graph(graphs[0]))
        assert rio.read_bundle_npz(rio.write_bundle_npz(comp, tmp_path / "b.npz")) == comp

    def test_npz_bytes_deterministic(self, graphs, tmp_path):
        b = rasterize_graph(graphs[1])[0]
        a = rio.write_bundle_npz(b, tmp_path / "a.npz").read_bytes()
        c = rio.write_bundle_npz(b, tmp_path / "c.npz").read_bytes()
        assert a == c

    def test_height_bin(self, graphs, tmp_path):
        comp = composite_roof(rasterize_graph(graphs[2]))
        path = rio.write_height_bin(comp.height, 0.5, tmp_path / "h.bin")
        raw = path.read_bytes()
        assert raw[:4] == b"RFHM" and len(raw) == 16 + 4 * 32 * 32
        h, mpp = rio.read_height_bin(path)
        assert mpp == 0.5
        assert np.array_equal(h, comp.height.astype(np.float32))

    def test_height_bin_bad_magic(self, tmp_path):
        f = tmp_path / "h.bin"
        f.write_bytes(b"XXXX" + bytes(12))
        with pytest.raises(rio.FormatError):
            rio.read_height_bin(f)

    def test_pgm_and_png(self, tmp_path):
        rng = np.random.default_rng(0)
        gray = rng.integers(0, 256, (32, 32), dtype=np.uint8)
        rgb = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
        assert np.array_equal(rio.read_image(rio.write_pgm(gray, tmp_path / "g.pgm")), gray)
        assert np.array_equal(rio.read_image(rio.write_png(rgb, tmp_path / "c.png")), rgb)
        assert (tmp_path / "g.pgm").read_bytes()[:2] == b"P5"

    def test_bundle_directory(self, tmp_path):
        b = rasterize_primitive(RoofPrimitive(4, 4, 20, 12, PrimitiveType.HORIZONTAL_HIP, 0.5, 0.4))
        written = rio.write_bundle(b, tmp_path / "prim")
        names = sorted(p.name for p in written)
        assert names == sorted(
            ["bundle.npz", "orientation.png", "orientation_lr.pgm", "orientation_tb.pgm",
             "orientation_bg.pgm", "angle.pgm", "height.bin"]
        )
        assert rio.read_bundle(tmp_path / "prim") == b

    def test_mask_image_bundle(self, tmp_path):
        mask = np.zeros((16, 16), np.uint8)
        mask[2:9, 3:12] = 255
        b = rio.read_bundle(rio.write_pgm(mask, tmp_path / "m.pgm"))
        assert np.array_equal(b.orientation[CH_LR], mask / 255.0)
        assert np.array_equal(b.orientation[CH_BG], 1 - mask / 255.0)

    def test_orientation_png_bundle(self, tmp_path):
        b = rasterize_primitive(RoofPrimitive(4, 4, 20, 12, PrimitiveType.VERTICAL_HIP, 0.5, 0.4))
        rio.write_bundle(b, tmp_path / "prim")
        c = rio.read_bundle(tmp_path / "prim" / "orientation.png")
        assert np.array_equal(c.orientation, b.orientation)


def shoelace(points):
    x, y = np.asarray(points, dtype=float).T
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def triangle_area(a, b, c):
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


class TestEarClip:
    @pytest.mark.parametrize(
        "poly",
        [
            [(0, 0), (4, 0), (4, 4), (0, 4)],
            [(0, 0), (4, 0), (4, 2), (2, 2), (2, 4), (0, 4)],
            [(0, 0), (6, 0), (6, 6), (4, 6), (4, 2), (2, 2), (2, 6), (0, 6)],
            [(0, 0), (2, 0), (4, 0), (4, 4), (0, 4)],
        ],
    )
    def test_area_matches_shoelace(self, poly):
        tris = rio.ear_clip(poly)
        assert len(tris) == len(poly) - 2
        assert sum(triangle_area(*(poly[k] for k in t)) for t in tris) == pytest.approx(shoelace(poly))

    def test_clockwise_input(self):
        poly = [(0, 4), (4, 4), (4, 0), (0, 0)]
        tris = rio.ear_clip(poly)
        assert sum(triangle_area(*(poly[k] for k in t)) for t in tris) == pytest.approx(16.0)

    def test_sampled_facets(self, graphs):
        for g in graphs:
            for f in graph_to_model(g).facets:
                pts = [tuple(v) for v in f.vertices[:, :2]]
                tris = rio.ear_clip(pts)
                area = sum(triangle_area(*(pts[k] for k in t)) for t in tris)
                assert area == pytest.approx(shoelace(pts))


class TestObj:
    def test_round_trip(self, graphs, tmp_path):
        comp = composite_roof(rasterize_graph(graphs[3]))
        m = extract_facet_polygons(comp, 3)
        verts, faces = rio.read_obj(rio.write_obj(m, tmp_path / "m.obj"))
        assert np.array_equal(verts, np.concatenate([f.vertices for f in m.facets]))
        assert len(faces) == sum(len(f) - 2 for f in m.facets)

    def test_text_layout(self):
        m = RoofModel((Facet(np.array([(0, 0, 3), (1, 0, 3), (1, 1, 4.0)])),))
        text = rio.model_to_obj(m)
        assert "o facet_0" in text and "v 0.0 0.0 3.0" in text and "f 1 2 3" in text


class TestManifest:
    def test_round_trip(self, tmp_path):
        out = tmp_path / "a.txt"
        out.write_text("hello")
        m = rio.build_manifest("sample", {"n": 1}, 7, [], [out], tmp_path)
        path = rio.write_manifest(m, tmp_path / rio.MANIFEST_NAME)
        assert rio.read_manifest(path) == m
        assert m["outputs"] == {"a.txt": rio.sha256_file(out)}
        assert rio.verify_manifest(m, tmp_path) == []

    def test_tamper_detected(self, tmp_path):
        out = tmp_path / "a.txt"
        out.write_text("hello")
        m = rio.build_manifest("sample", {}, 0, [], [out], tmp_path)
        out.write_text("hellO")
        assert rio.verify_manifest(m, tmp_path) == ["a.txt"]
        out.unlink()
        assert rio.verify_manifest(m, tmp_path) == ["a.txt"]

    def test_empty_run(self, tmp_path):
        m = rio.build_manifest("rmmd")
        assert rio.read_manifest(rio.write_manifest(m, tmp_path / "m.json")) == m
        assert m["outputs"] == {} and m["inputs"] == {}

    def test_missing_fields(self, tmp_path):
        f = tmp_path / "m.json"
        f.write_text('{"subcommand": "x"}')
        with pytest.raises(rio.FormatError):
            rio.read_manifest(f)
