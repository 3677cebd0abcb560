import csv
import filecmp
import io
import json

import numpy as np
import pytest

from roofkit import io as rio
from roofkit.cli import RELATION_FIELDS, UsageError, resolve_threads, run
from roofkit.raster import composite_roof, merge_coplanar, rasterize_graph, render_normal_map
from roofkit.sampler import SamplerConfig, sample_graphs


@pytest.fixture
def graph_file(tmp_path):
    return rio.write_graph(sample_graphs(1, SamplerConfig(seed=41))[0], tmp_path / "graph.json")


def _trees_equal(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(_trees_equal(a / d, b / d) for d in cmp.common_dirs)


class TestExitCodes:
    def test_unknown_subcommand(self, capsys):
        assert run(["frobnicate"]) == 2

    def test_unknown_flag(self, capsys):
        assert run(["sample", "--n", "1", "--bogus"]) == 2

    def test_missing_out(self, capsys):
        assert run(["sample", "--n", "1"]) == 2
        assert "needs --out" in capsys.readouterr().err

    def test_missing_input_file(self, tmp_path, capsys):
        assert run(["detect", str(tmp_path / "nope.json")]) == 1
        assert "roofkit detect:" in capsys.readouterr().err

    def test_vectorize_empty_mask(self, tmp_path, capsys):
        path = rio.write_pgm(np.zeros((16, 16), np.uint8), tmp_path / "empty.pgm")
        assert run(["vectorize", str(path)]) == 1
        assert "no boundary response" in capsys.readouterr().err

    def test_version(self, capsys):
        assert run(["--version"]) == 0


class TestThreads:
    def test_flag_wins(self, monkeypatch):
        monkeypatch.setenv("ROOFKIT_THREADS", "3")
        assert resolve_threads(5) == 5

    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv("ROOFKIT_THREADS", "3")
        assert resolve_threads(None) == 3

    def test_default(self, monkeypatch):
        monkeypatch.delenv("ROOFKIT_THREADS", raising=False)
        assert resolve_threads(None) == 1

    @pytest.mark.parametrize("env", ["zero", "0", "-2"])
    def test_bad_env(self, monkeypatch, env):
        monkeypatch.setenv("ROOFKIT_THREADS", env)
        with pytest.raises(UsageError):
            resolve_threads(None)


class TestSubcommands:
    def test_sample_pipeline_deterministic(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("ROOFKIT_THREADS", "2")
        assert run(["sample", "--n", "3", "--seed", "7", "--pipeline", "--out", str(tmp_path / "a")]) == 0
        assert run(["sample", "--n", "3", "--seed", "7", "--pipeline", "--out", str(tmp_path / "b")]) == 0
        assert _trees_equal(tmp_path / "a", tmp_path / "b")
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert len(names) == 13 and "manifest.json" in names
        m = rio.read_manifest(tmp_path / "a" / "manifest.json")
        assert m["seed"] == 7 and rio.verify_manifest(m, tmp_path / "a") == []

    def test_rmmd_identity(self, tmp_path, capsys):
        out = tmp_path / "s"
        assert run(["sample", "--n", "3", "--seed", "2", "--pipeline", "--out", str(out)]) == 0
        capsys.readouterr()
        assert run(["rmmd", "--gt", str(out), "--gen", str(out)]) == 0
        assert capsys.readouterr().out.strip() == "0.0"

    def test_rmmd_retrieve(self, tmp_path, capsys):
        out = tmp_path / "s"
        run(["sample", "--n", "2", "--seed", "3", "--pipeline", "--out", str(out)])
        capsys.readouterr()
        assert run(["rmmd", "--gt", str(out), "--gen", str(out), "--retrieve", "--threads", "2"]) == 0
        lines = capsys.readouterr().out.splitlines()
        rows = list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))
        assert [(r["gt"], r["nearest_gen"]) for r in rows] == [("model_0000", "model_0000"), ("model_0001", "model_0001")]

    def test_detect(self, graph_file, capsys):
        assert run(["detect", str(graph_file)]) == 0
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        g = rio.read_graph(graph_file)
        assert len(rows) == len(g.relations)
        assert tuple(rows[0]) == RELATION_FIELDS

    def test_rasterize_then_vectorize(self, graph_file, tmp_path, capsys):
        out = tmp_path / "r"
        assert run(["rasterize", str(graph_file), "--out", str(out)]) == 0
        assert (out / "composite" / "bundle.npz").is_file() and (out / "normal.png").is_file()
        capsys.readouterr()
        report = tmp_path / "report.csv"
        assert run(["vectorize", str(out / "prim_0"), "--report", str(report)]) == 0
        prim = rio.primitive_from_dict(json.loads(capsys.readouterr().out))
        assert prim.box == rio.read_graph(graph_file).primitives[0].box
        assert len(report.read_text().splitlines()) == 5

    def test_enforce(self, graph_file, tmp_path, capsys):
        run(["rasterize", str(graph_file), "--out", str(tmp_path / "r")])
        out = tmp_path / "e"
        args = ["enforce", str(graph_file), "--rasters", str(tmp_path / "r"), "--out", str(out)]
        assert run(args) == 0
        g = rio.read_graph(out / "graph.json")
        assert len(g) == len(rio.read_graph(graph_file))
        assert rio.verify_manifest(rio.read_manifest(out / "manifest.json"), out) == []

    def test_enforce_bad_iterations(self, graph_file, tmp_path, capsys):
        assert run(["enforce", str(graph_file), "--iterations", "0", "--out", str(tmp_path)]) == 2

    def test_export_obj_from_graph(self, graph_file, tmp_path, capsys):
        out = tmp_path / "m.obj"
        assert run(["export-obj", str(graph_file), "--out", str(out)]) == 0
        verts, faces = rio.read_obj(out)
        assert verts.shape[1] == 3 and len(faces) > 0

    def test_render(self, graph_file, tmp_path, capsys):
        out = tmp_path / "n.png"
        assert run(["render", str(graph_file), "--out", str(out)]) == 0
        g = rio.read_graph(graph_file)
        expected = render_normal_map(merge_coplanar(composite_roof(rasterize_graph(g)), g))
        assert np.array_equal(rio.read_image(out), expected)
