"""File formats: graph, primitive and model JSON, raster bundles, OBJ meshes and run manifests.

Every writer is deterministic (fixed key order, no timestamps) so that the
same inputs always produce the same bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
import zipfile
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np
from PIL import Image

from . import __version__
from .model import (
    CH_BG,
    Facet,
    PrimitiveType,
    RasterBundle,
    RelationVector,
    RoofGraph,
    RoofkitError,
    RoofModel,
    RoofPrimitive,
)

HEIGHT_MAGIC = b"RFHM"
_HEIGHT_HEADER = struct.Struct("<4sId")  # magic, resolution, meters per pixel: 16 bytes
_BUNDLE_ARRAYS = ("orientation", "angle", "height", "labels")
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class FormatError(RoofkitError):
    pass


def _dumps(obj: Any) -> str:
    # json writes floats with repr, the shortest string that parses back to
    # the same double
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _read_json(path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise FormatError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


# ---------------------------------------------------------------------------
# Primitives and graphs
# ---------------------------------------------------------------------------

def primitive_to_dict(p: RoofPrimitive) -> dict:
    return {
        "box": [float(v) for v in p.box],
        "type": p.ptype.value,
        "angle_lr": float(p.angle_lr),
        "angle_tb": float(p.angle_tb),
    }


def primitive_from_dict(d: Mapping) -> RoofPrimitive:
    try:
        box = [float(v) for v in d["box"]]
        if len(box) != 4:
            raise FormatError(f"box needs 4 numbers, got {len(box)}")
        ptype = PrimitiveType(d["type"])
        return RoofPrimitive(*box, ptype, float(d.get("angle_lr", 0.0)), float(d.get("angle_tb", 0.0)))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed primitive entry: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, RoofkitError):
            raise
        raise FormatError(f"malformed primitive entry: {exc}") from None


def graph_to_dict(graph: RoofGraph) -> dict:
    return {
        "resolution": int(graph.resolution),
        "meters_per_pixel": float(graph.meters_per_pixel),
        "primitives": [primitive_to_dict(p) for p in graph.primitives],
        "relations": [
            {"pair": [i, j], "v": [float(x) for x in graph.relations[(i, j)].as_tuple()]}
            for (i, j) in sorted(graph.relations)
        ],
    }


def graph_from_dict(d: Mapping) -> RoofGraph:
    try:
        prims = tuple(primitive_from_dict(p) for p in d["primitives"])
        rels = {}
        for r in d.get("relations", []):
            i, j = (int(k) for k in r["pair"])
            rels[(i, j)] = RelationVector.from_values(r["v"])
        return RoofGraph(prims, rels, int(d["resolution"]), float(d["meters_per_pixel"]))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed graph: {exc}") from None


def dumps_graph(graph: RoofGraph) -> str:
    return _dumps(graph_to_dict(graph))


def loads_graph(text: str) -> RoofGraph:
    return graph_from_dict(json.loads(text))


def write_graph(graph: RoofGraph, path) -> Path:
    path = Path(path)
    path.write_text(dumps_graph(graph))
    return path


def read_graph(path) -> RoofGraph:
    return graph_from_dict(_read_json(path))


def write_primitive(p: RoofPrimitive, path) -> Path:
    path = Path(path)
    path.write_text(_dumps(primitive_to_dict(p)))
    return path


def read_primitive(path) -> RoofPrimitive:
    return primitive_from_dict(_read_json(path))


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

def model_to_list(model: RoofModel) -> list:
    return [
        {"vertices": f.vertices.tolist(), "plane_angle": float(f.plane_angle)} for f in model.facets
    ]


def model_from_list(items) -> RoofModel:
    if not isinstance(items, list):
        raise FormatError("model JSON must be a list of facets")
    try:
        return RoofModel(tuple(Facet(np.array(f["vertices"], dtype=float), float(f.get("plane_angle", 0.0))) for f in items))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed facet: {exc}") from None


def write_model(model: RoofModel, path) -> Path:
    path = Path(path)
    path.write_text(_dumps(model_to_list(model)))
    return path


def read_model(path) -> RoofModel:
    return model_from_list(_read_json(path))


def read_model_dir(directory) -> list[tuple[str, RoofModel]]:
    """All model JSON files in a directory, sorted by file name.

    Other JSON files (graphs, manifests) are skipped, so a ``sample
    --pipeline`` output directory can be used directly.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"not a directory: {directory}")
    models = []
    for f in sorted(directory.glob("*.json")):
        data = _read_json(f)
        if isinstance(data, list):
            models.append((f.stem, model_from_list(data)))
    if not models:
        raise FormatError(f"no model JSON files in {directory}")
    return models


# ---------------------------------------------------------------------------
# Raster bundles
# ---------------------------------------------------------------------------

def _write_zip(path: Path, arrays: Mapping[str, np.ndarray]) -> None:
    """An ``.npz`` archive with fixed member timestamps (np.savez stamps the clock)."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_DATE)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


def write_bundle_npz(bundle: RasterBundle, path) -> Path:
    """Lossless bundle archive."""
    path = Path(path)
    arrays = {name: getattr(bundle, name) for name in _BUNDLE_ARRAYS}
    arrays["meters_per_pixel"] = np.array(bundle.meters_per_pixel, dtype=float)
    _write_zip(path, arrays)
    return path


def read_bundle_npz(path) -> RasterBundle:
    try:
        with np.load(path, allow_pickle=False) as z:
            return RasterBundle(*(z[name] for name in _BUNDLE_ARRAYS), float(z["meters_per_pixel"].item()))
    except FileNotFoundError:
        raise FormatError(f"no such file: {path}") from None
    except (KeyError, ValueError, zipfile.BadZipFile) as exc:
        if isinstance(exc, RoofkitError):
            raise
        raise FormatError(f"{path}: not a raster bundle archive ({exc})") from None


def _to_u8(a: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(a, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_png(rgb: np.ndarray, path) -> Path:
    path = Path(path)
    Image.fromarray(np.ascontiguousarray(rgb)).save(path, format="PNG")
    return path


def write_pgm(gray: np.ndarray, path) -> Path:
    path = Path(path)
    Image.fromarray(np.ascontiguousarray(gray, dtype=np.uint8)).save(path, format="PPM")
    return path


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            return np.asarray(im)
    except FileNotFoundError:
        raise FormatError(f"no such file: {path}") from None
    except OSError as exc:
        raise FormatError(f"{path}: unreadable image ({exc})") from None


def write_height_bin(height: np.ndarray, meters_per_pixel: float, path) -> Path:
    """Square float32 height grid behind a 16-byte header."""
    height = np.asarray(height)
    if height.ndim != 2 or height.shape[0] != height.shape[1]:
        raise FormatError(f"height grid must be square, got {height.shape}")
    path = Path(path)
    header = _HEIGHT_HEADER.pack(HEIGHT_MAGIC, height.shape[0], float(meters_per_pixel))
    path.write_bytes(header + height.astype("<f4").tobytes())
    return path


def read_height_bin(path) -> tuple[np.ndarray, float]:
    data = Path(path).read_bytes()
    if len(data) < _HEIGHT_HEADER.size:
        raise FormatError(f"{path}: truncated height header")
    magic, res, mpp = _HEIGHT_HEADER.unpack_from(data)
    if magic != HEIGHT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    body = data[_HEIGHT_HEADER.size:]
    if len(body) != 4 * res * res:
        raise FormatError(f"{path}: expected {res}x{res} float32 values")
    return np.frombuffer(body, dtype="<f4").reshape(res, res).astype(np.float64), mpp


def write_bundle(bundle: RasterBundle, directory) -> list[Path]:
    """Bundle directory: lossless archive plus viewable images and the height grid."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    o = bundle.orientation
    return [
        write_bundle_npz(bundle, d / "bundle.npz"),
        write_png(_to_u8(np.moveaxis(o, 0, -1)), d / "orientation.png"),
        write_pgm(_to_u8(o[0]), d / "orientation_lr.pgm"),
        write_pgm(_to_u8(o[1]), d / "orientation_tb.pgm"),
        write_pgm(_to_u8(o[2]), d / "orientation_bg.pgm"),
        write_pgm(_to_u8(bundle.angle), d / "angle.pgm"),
        write_height_bin(bundle.height, bundle.meters_per_pixel, d / "height.bin"),
    ]


def bundle_from_image(img: np.ndarray, meters_per_pixel: float) -> RasterBundle:
    """Orientation-only bundle from an image.

    RGB is read as the three orientation channels.  A grayscale image is a
    primitive mask; its foreground goes to the left/right channel.
    """
    img = np.asarray(img, dtype=float) / 255.0
    if img.ndim == 2:
        orient = np.stack([img, np.zeros_like(img), 1.0 - img])
    elif img.ndim == 3 and img.shape[-1] == 3:
        orient = np.moveaxis(img, -1, 0)
        total = orient.sum(axis=0)
        empty = total == 0
        orient = orient / np.where(empty, 1.0, total)
        orient[CH_BG][empty] = 1.0
    else:
        raise FormatError(f"unsupported image shape {img.shape}")
    shape = orient.shape[1:]
    return RasterBundle(orient, np.zeros(shape), np.zeros(shape), np.full(shape, -1), meters_per_pixel)


def read_bundle(path, meters_per_pixel: float = 0.5) -> RasterBundle:
    """Read a bundle directory, a ``.npz`` archive, or a PNG/PGM orientation or mask image."""
    path = Path(path)
    if path.is_dir():
        path = path / "bundle.npz"
    if path.suffix == ".npz":
        return read_bundle_npz(path)
    return bundle_from_image(read_image(path), meters_per_pixel)


# ---------------------------------------------------------------------------
# OBJ export
# ---------------------------------------------------------------------------

def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _in_triangle(p, a, b, c) -> bool:
    # closed triangle test for a counter-clockwise triangle
    return _cross(a, b, p) >= 0 and _cross(b, c, p) >= 0 and _cross(c, a, p) >= 0


def ear_clip(points) -> list[tuple[int, int, int]]:
    """Triangulate a simple polygon (2-D, either winding) by ear clipping.

    Returns index triples into ``points``, each counter-clockwise in the
    plane.  Collinear vertices are clipped as zero-area ears at the end.
    """
    pts = np.asarray(points, dtype=float)[:, :2]
    n = len(pts)
    if n < 3:
        raise RoofkitError("polygon needs at least 3 vertices")
    idx = list(range(n))
    if _signed_area(pts) < 0:
        idx.reverse()
    tris = []
    while len(idx) > 3:
        m = len(idx)
        for k in range(m):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % m]
            a, b, c = pts[i0], pts[i1], pts[i2]
            if _cross(a, b, c) <= 0:
                continue
            if any(
                _in_triangle(pts[q], a, b, c)
                for q in idx
                if q not in (i0, i1, i2) and not (np.array_equal(pts[q], a) or np.array_equal(pts[q], b) or np.array_equal(pts[q], c))
            ):
                continue
            tris.append((i0, i1, i2))
            del idx[k]
            break
        else:
            # only reflex or collinear vertices left: drop a collinear one
            for k in range(m):
                i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % m]
                if _cross(pts[i0], pts[i1], pts[i2]) == 0:
                    del idx[k]
                    break
            else:
                raise RoofkitError("ear clipping failed; polygon is not simple")
    if _cross(pts[idx[0]], pts[idx[1]], pts[idx[2]]) != 0:
        tris.append(tuple(idx))
    return tris


def model_to_obj(model: RoofModel) -> str:
    """Wavefront OBJ text: one object group per facet, faces triangulated."""
    lines = [f"# roofkit {__version__}"]
    base = 1
    for k, f in enumerate(model.facets):
        v = f.vertices
        lines.append(f"o facet_{k}")
        for row in v:
            x, y, z = float(row[0]), float(row[1]), float(row[2]) if len(row) == 3 else 0.0
            lines.append(f"v {x!r} {y!r} {z!r}")
        for a, b, c in ear_clip(v):
            lines.append(f"f {a + base} {b + base} {c + base}")
        base += len(v)
    return "\n".join(lines) + "\n"


def write_obj(model: RoofModel, path) -> Path:
    path = Path(path)
    path.write_text(model_to_obj(model))
    return path


def read_obj(path) -> tuple[np.ndarray, list[tuple[int, int, int]]]:
    """Vertices and zero-based triangles of an OBJ file (for checking exports)."""
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append(tuple(int(x.split("/")[0]) - 1 for x in parts[1:4]))
    return np.array(verts, dtype=float).reshape(-1, 3), faces


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_map(paths: Iterable, root: Path | None) -> dict[str, str]:
    out = {}
    for p in paths:
        p = Path(p)
        key = p.relative_to(root).as_posix() if root is not None and p.is_relative_to(root) else p.as_posix()
        out[key] = sha256_file(p)
    return dict(sorted(out.items()))


def build_manifest(
    subcommand: str,
    config: Mapping | None = None,
    seed: int | None = None,
    inputs: Iterable = (),
    outputs: Iterable = (),
    root=None,
) -> dict:
    """Manifest record; output paths are stored relative to ``root``."""
    root = Path(root) if root is not None else None
    return {
        "subcommand": subcommand,
        "version": __version__,
        "seed": seed,
        "config": dict(config or {}),
        "inputs": _hash_map(inputs, None),
        "outputs": _hash_map(outputs, root),
    }


def write_manifest(manifest: Mapping, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def read_manifest(path) -> dict:
    m = _read_json(path)
    missing = {"subcommand", "version", "seed", "config", "inputs", "outputs"} - set(m)
    if missing:
        raise FormatError(f"manifest missing fields {sorted(missing)}")
    return m


def verify_manifest(manifest: Mapping, root) -> list[str]:
    """Output paths whose current hash differs from the manifest (or that vanished)."""
    root = Path(root)
    bad = []
    for rel, digest in manifest["outputs"].items():
        p = root / rel
        if not p.is_file() or sha256_file(p) != digest:
            bad.append(rel)
    return bad
