"""Relationship detection, ground-truth snapping and probabilistic
colinearity enforcement with rectangle warping."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .model import (
    BOTTOM,
    CH_BG,
    LEFT,
    RIGHT,
    TOP,
    RasterBundle,
    RelationVector,
    RoofGraph,
    RoofkitError,
    RoofPrimitive,
    pair_key,
)

DEFAULT_TOL_PX = 1.0
DEFAULT_TOL_DEG = 18.0
# slack for float round-off when a tolerance is hit exactly (e.g. degrees
# converted to radians and back)
_ROUNDOFF = 1e-9

# Box arrays are (l, t, r, b); relation vectors are ordered (l, r, t, b).
_BOX_COLUMN = {LEFT: 0, TOP: 1, RIGHT: 2, BOTTOM: 3}


def detect_relations(
    a: RoofPrimitive,
    b: RoofPrimitive,
    tol_px: float = DEFAULT_TOL_PX,
    tol_deg: float = DEFAULT_TOL_DEG,
) -> RelationVector:
    """Hard 0/1 relation vector between two primitives.

    A boundary pair is colinear when the coordinates differ by at most
    ``tol_px``; a facet pair is parallel when both primitives have those
    facets and the angles differ by at most ``tol_deg`` degrees.
    """
    colinear = [
        1.0 if abs(a.coord(s) - b.coord(s)) <= tol_px + _ROUNDOFF else 0.0
        for s in (LEFT, RIGHT, TOP, BOTTOM)
    ]

    def parallel(has_a, has_b, ang_a, ang_b):
        if not (has_a and has_b):
            return 0.0
        diff = abs(math.degrees(ang_a) - math.degrees(ang_b))
        return 1.0 if diff <= tol_deg + _ROUNDOFF else 0.0

    p_lr = parallel(a.ptype.has_lr, b.ptype.has_lr, a.angle_lr, b.angle_lr)
    p_tb = parallel(a.ptype.has_tb, b.ptype.has_tb, a.angle_tb, b.angle_tb)
    return RelationVector(*colinear, p_lr, p_tb)


def detect_graph(
    graph: RoofGraph, tol_px: float = DEFAULT_TOL_PX, tol_deg: float = DEFAULT_TOL_DEG
) -> dict[tuple[int, int], RelationVector]:
    prims = graph.primitives
    return {(i, j): detect_relations(prims[i], prims[j], tol_px, tol_deg) for i, j in graph.pairs()}


def with_detected_relations(graph: RoofGraph, tol_px=DEFAULT_TOL_PX, tol_deg=DEFAULT_TOL_DEG) -> RoofGraph:
    return replace(graph, relations=detect_graph(graph, tol_px, tol_deg))


def snap_ground_truth(graph: RoofGraph) -> RoofGraph:
    """Enforce the graph's hard relations by copying values between primitives.

    Pairs are visited in index order and the higher-indexed primitive takes
    the lower-indexed one's coordinate (or angle), so chains collapse onto
    the first primitive.  Idempotent.
    """
    prims = [list(p.box_by_side) + [p.angle_lr, p.angle_tb] for p in graph.primitives]
    for i, j in graph.pairs():
        rel = graph.relations.get((i, j))
        if rel is None:
            continue
        vals = rel.as_tuple()
        for k in range(6):
            if vals[k] > 0.5:
                prims[j][k] = prims[i][k]
    out = []
    for p, (l, r, t, b, a_lr, a_tb) in zip(graph.primitives, prims):
        out.append(replace(p, left=l, right=r, top=t, bottom=b, angle_lr=a_lr, angle_tb=a_tb))
    return replace(graph, primitives=tuple(out))


def enforcement_weight(p):
    """ReLU(2p - 1): relations below probability 0.5 have no influence."""
    return np.maximum(2.0 * np.asarray(p, dtype=float) - 1.0, 0.0) if np.ndim(p) else max(2.0 * p - 1.0, 0.0)


def _colinear_matrix(relations: Mapping[tuple[int, int], RelationVector], n: int) -> np.ndarray:
    """(4, n, n) colinearity probabilities indexed by relation side."""
    probs = np.zeros((4, n, n))
    for (i, j), rel in relations.items():
        vals = rel.as_tuple()[:4]
        probs[:, i, j] = vals
        probs[:, j, i] = vals
    return probs


def enforce_colinearity(
    boxes,
    relations: Mapping[tuple[int, int], RelationVector],
    iterations: int = 1,
) -> np.ndarray:
    """Replace every boundary coordinate by a weighted mean over all primitives.

    For primitive i and side s the weights are 1 for i itself and
    ``enforcement_weight(p_ij)`` for every other j.  ``iterations > 1``
    repeats the simultaneous update, which converges toward consensus
    within each connected group.  Returns a new (n, 4) (l, t, r, b) array.
    """
    boxes = np.array(boxes, dtype=float).reshape(-1, 4)
    n = len(boxes)
    for key in relations:
        if not (0 <= key[0] < n and 0 <= key[1] < n):
            raise RoofkitError(f"relation {key} refers to a missing primitive")
    weights = enforcement_weight(_colinear_matrix(relations, n))
    for side in range(4):
        np.fill_diagonal(weights[side], 1.0)
    for _ in range(iterations):
        out = boxes.copy()
        for side, col in _BOX_COLUMN.items():
            w = weights[side]
            vals = boxes[:, col]
            for i in range(n):
                active = w[i] > 0
                contrib = vals[active]
                if np.all(contrib == contrib[0]):
                    out[i, col] = contrib[0]  # weighted mean of equal values
                    continue
                # summed in index order so that equal weight rows give
                # bitwise-equal results
                num = 0.0
                den = 0.0
                for j in np.flatnonzero(active):
                    num += w[i, j] * vals[j]
                    den += w[i, j]
                out[i, col] = num / den
        boxes = out
    return boxes


@dataclass(frozen=True)
class RectTransform:
    """Axis-aligned scale-then-translate map x' = scale_x * x + translate_x."""

    scale_x: float = 1.0
    scale_y: float = 1.0
    translate_x: float = 0.0
    translate_y: float = 0.0

    def __post_init__(self):
        if not (self.scale_x > 0 and self.scale_y > 0):
            raise RoofkitError(f"non-positive scale in {self}")

    def apply(self, x, y):
        return self.scale_x * np.asarray(x) + self.translate_x, self.scale_y * np.asarray(y) + self.translate_y

    def inverse(self, x, y):
        return (np.asarray(x) - self.translate_x) / self.scale_x, (np.asarray(y) - self.translate_y) / self.scale_y

    @property
    def is_identity(self) -> bool:
        return self == RectTransform()


def rect_transform(original: Sequence[float], adjusted: Sequence[float]) -> RectTransform:
    """Transform mapping the original (l, t, r, b) box corners onto the adjusted box."""
    l, t, r, b = (float(v) for v in original)
    l2, t2, r2, b2 = (float(v) for v in adjusted)
    if not (r > l and b > t):
        raise RoofkitError(f"degenerate original box {tuple(original)}")
    if not (r2 > l2 and b2 > t2):
        raise RoofkitError(f"degenerate adjusted box {tuple(adjusted)}")
    sx = (r2 - l2) / (r - l)
    sy = (b2 - t2) / (b - t)
    return RectTransform(sx, sy, l2 - sx * l, t2 - sy * t)


def _bilinear(img: np.ndarray, u: np.ndarray, v: np.ndarray, fill: float) -> np.ndarray:
    """Sample ``img`` at fractional pixel indices (u = column, v = row)."""
    h, w = img.shape
    padded = np.pad(img, 1, constant_values=fill)
    # shift into the padded frame and clamp to the padding ring
    uu = np.clip(u + 1.0, 0.0, w + 1.0)
    vv = np.clip(v + 1.0, 0.0, h + 1.0)
    u0 = np.minimum(np.floor(uu).astype(int), w)
    v0 = np.minimum(np.floor(vv).astype(int), h)
    fu = uu - u0
    fv = vv - v0
    top = padded[v0, u0] * (1 - fu) + padded[v0, u0 + 1] * fu
    bot = padded[v0 + 1, u0] * (1 - fu) + padded[v0 + 1, u0 + 1] * fu
    return top * (1 - fv) + bot * fv


def _nearest(img: np.ndarray, u: np.ndarray, v: np.ndarray, fill) -> np.ndarray:
    h, w = img.shape
    iu = np.floor(u + 0.5).astype(int)
    iv = np.floor(v + 0.5).astype(int)
    ok = (iu >= 0) & (iu < w) & (iv >= 0) & (iv < h)
    out = np.full(u.shape, fill, dtype=img.dtype)
    out[ok] = img[iv[ok], iu[ok]]
    return out


def warp_bundle(bundle: RasterBundle, t: RectTransform) -> RasterBundle:
    """Inverse-mapped bilinear warp of the orientation and angle images.

    Samples outside the source image read as background.  Heights and
    labels are carried along by nearest-neighbour lookup.
    """
    h, w = bundle.shape
    jj, ii = np.mgrid[0:h, 0:w]
    x, y = t.inverse(ii + 0.5, jj + 0.5)
    u, v = x - 0.5, y - 0.5
    fills = (0.0, 0.0, 1.0)
    orient = np.stack([_bilinear(bundle.orientation[c], u, v, fills[c]) for c in range(3)])
    total = orient.sum(axis=0)
    off = np.abs(total - 1.0) > 1e-9
    if np.any(off):
        orient[:, off] /= total[off]
    angle = _bilinear(bundle.angle, u, v, 0.0)
    angle[orient[CH_BG] >= 1.0] = 0.0
    height = _nearest(bundle.height, u, v, 0.0)
    labels = _nearest(bundle.labels, u, v, -1)
    return RasterBundle(orient, angle, height, labels, bundle.meters_per_pixel)


def enforce_graph(
    graph: RoofGraph,
    bundles: Sequence[RasterBundle] | None = None,
    mode: str = "bilinear",
    wall_height: float | None = None,
    iterations: int = 1,
) -> tuple[RoofGraph, list[RasterBundle]]:
    """Enforce colinearity on a graph and bring its per-primitive rasters along.

    ``mode="bilinear"`` warps each input bundle with the rectangle transform
    from its original to its adjusted box.  ``mode="exact"`` re-rasterizes
    the adjusted primitives instead (reference result).
    """
    from .raster import DEFAULT_WALL_HEIGHT, rasterize_graph

    if mode not in ("bilinear", "exact"):
        raise RoofkitError(f"unknown enforcement mode {mode!r}")
    wall = DEFAULT_WALL_HEIGHT if wall_height is None else wall_height
    boxes = graph.boxes()
    adjusted = enforce_colinearity(boxes, graph.relations, iterations)
    prims = tuple(p.with_box(bx) for p, bx in zip(graph.primitives, adjusted))
    new_graph = replace(graph, primitives=prims)
    if mode == "exact":
        return new_graph, rasterize_graph(new_graph, wall)
    if bundles is None:
        bundles = rasterize_graph(graph, wall)
    if len(bundles) != len(prims):
        raise RoofkitError(f"{len(bundles)} rasters for {len(prims)} primitives")
    warped = [warp_bundle(bd, rect_transform(b0, b1)) for bd, b0, b1 in zip(bundles, boxes, adjusted)]
    return new_graph, warped


def relation_table(relations: Mapping[tuple[int, int], RelationVector]) -> list[dict]:
    rows = []
    for (i, j) in sorted(relations):
        v = relations[(i, j)]
        row = {"i": i, "j": j}
        row.update(
            zip(
                ("colinear_left", "colinear_right", "colinear_top", "colinear_bottom", "parallel_lr", "parallel_tb"),
                v.as_tuple(),
            )
        )
        rows.append(row)
    return rows


def relation_consistent(graph: RoofGraph, tol_px=DEFAULT_TOL_PX, tol_deg=DEFAULT_TOL_DEG) -> bool:
    """True if re-detection reproduces the stored relations at both ``tol`` and zero tolerance."""
    for tp, td in ((tol_px, tol_deg), (0.0, 0.0)):
        det = detect_graph(graph, tp, td)
        if any(det[k] != graph.relations.get(pair_key(*k)) for k in det):
            return False
    return True
