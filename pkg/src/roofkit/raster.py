"""Ground-truth rasterization: primitives to rasters, compositing, coplanar
merging, facet polygon extraction and normal-map rendering."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .model import (
    BOTTOM,
    CH_BG,
    CH_LR,
    CH_TB,
    DEFAULT_METERS_PER_PIXEL,
    LEFT,
    RIGHT,
    TOP,
    Facet,
    PrimitiveType,
    RasterBundle,
    RoofGraph,
    RoofkitError,
    RoofModel,
    RoofPrimitive,
    pair_key,
    polygon_is_simple,
)

log = logging.getLogger(__name__)

DEFAULT_WALL_HEIGHT = 3.0

_TYPE_CODES = {
    PrimitiveType.HORIZONTAL_GABLE: 0,
    PrimitiveType.VERTICAL_GABLE: 1,
    PrimitiveType.HORIZONTAL_HIP: 2,
    PrimitiveType.VERTICAL_HIP: 3,
}


@dataclass(frozen=True)
class FacetPlane:
    owner: int
    side: int
    angle: float
    box: tuple[float, float, float, float]
    wall_height: float = DEFAULT_WALL_HEIGHT
    meters_per_pixel: float = DEFAULT_METERS_PER_PIXEL

    def distance(self, x, y):
        """Signed distance in meters from the owning boundary toward the box interior."""
        l, t, r, b = self.box
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = {LEFT: x - l, RIGHT: r - x, TOP: y - t, BOTTOM: b - y}[self.side]
        return d * self.meters_per_pixel

    def height(self, x, y):
        return self.wall_height + math.tan(self.angle) * self.distance(x, y)


def facet_planes(
    p: RoofPrimitive,
    wall_height: float = DEFAULT_WALL_HEIGHT,
    meters_per_pixel: float = DEFAULT_METERS_PER_PIXEL,
    owner: int = 0,
) -> list[FacetPlane]:
    """Facet planes of a primitive, dominant facets first.

    A gable yields two planes, a hip four.  The roof surface is the
    pointwise minimum of the planes over the rectangle.
    """
    return [
        FacetPlane(owner, side, p.angle_for(side), p.box, wall_height, meters_per_pixel)
        for side in p.ptype.sides
    ]


def roof_height(p: RoofPrimitive, x, y, wall_height=DEFAULT_WALL_HEIGHT, meters_per_pixel=DEFAULT_METERS_PER_PIXEL):
    """Analytic roof surface height at (x, y); nan outside the box."""
    planes = facet_planes(p, wall_height, meters_per_pixel)
    h = np.min([pl.height(x, y) for pl in planes], axis=0)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside = (x > p.left) & (x < p.right) & (y > p.top) & (y < p.bottom)
    return np.where(inside, h, np.nan)


def rasterize_arrays(
    boxes,
    types,
    angles,
    resolution: int,
    wall_height: float = DEFAULT_WALL_HEIGHT,
    meters_per_pixel: float = DEFAULT_METERS_PER_PIXEL,
    indices=None,
    dtype=np.float64,
    full: bool = True,
):
    """Batched rasterization of N primitives.

    boxes (N, 4) as (l, t, r, b), types (N,) PrimitiveType or integer codes,
    angles (N, 2) as (angle_lr, angle_tb).  Returns ``(orientation, angle,
    height, labels)`` shaped (N, 3, R, R), (N, R, R), (N, R, R), (N, R, R).
    With ``full=False`` height and labels are skipped (returned as None).

    The roof heights are separable: within one primitive the left/right
    planes depend on x only and the top/bottom planes on y only, so the
    per-pixel lowest-facet choice is a comparison of two 1-D profiles.
    """
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    n = len(boxes)
    codes = np.array(
        [_TYPE_CODES[t] if isinstance(t, PrimitiveType) else int(t) for t in np.atleast_1d(types)],
        dtype=int,
    )
    angles = np.asarray(angles, dtype=float).reshape(-1, 2)
    if indices is None:
        indices = np.zeros(n, dtype=int)
    indices = np.asarray(indices, dtype=int).reshape(n)

    l, t, r, b = (boxes[:, k : k + 1] for k in range(4))
    if np.any(l < 0) or np.any(t < 0) or np.any(r > resolution) or np.any(b > resolution):
        raise RoofkitError(f"primitive box outside the {resolution}x{resolution} image")

    centres = np.arange(resolution, dtype=float) + 0.5
    has_lr = (codes != 0)[:, None]
    has_tb = (codes != 1)[:, None]
    horizontal = (codes == 0) | (codes == 2)

    tan_lr = np.tan(angles[:, 0:1])
    tan_tb = np.tan(angles[:, 1:2])
    h_left = wall_height + tan_lr * ((centres - l) * meters_per_pixel)
    h_right = wall_height + tan_lr * ((r - centres) * meters_per_pixel)
    h_top = wall_height + tan_tb * ((centres - t) * meters_per_pixel)
    h_bottom = wall_height + tan_tb * ((b - centres) * meters_per_pixel)

    right_wins = h_right < h_left
    h_lr = np.where(has_lr, np.where(right_wins, h_right, h_left), np.inf)
    side_lr = np.where(right_wins, RIGHT, LEFT)
    bottom_wins = h_bottom < h_top
    h_tb = np.where(has_tb, np.where(bottom_wins, h_bottom, h_top), np.inf)
    side_tb = np.where(bottom_wins, BOTTOM, TOP)

    col_in = (centres > l) & (centres < r)
    row_in = (centres > t) & (centres < b)
    inside = row_in[:, :, None] & col_in[:, None, :]

    # ties go to the declared type's dominant facets: for vertical types the
    # left/right heights are nudged down one ulp so "<=" acts as "<"
    h_cmp = np.where(horizontal[:, None], h_lr, np.nextafter(h_lr, -np.inf))
    hx = h_cmp[:, None, :]
    hy = h_tb[:, :, None]
    pick_tb = hy <= hx
    tb_px = inside & pick_tb
    lr_px = inside ^ tb_px

    orient = np.empty((n, 3, resolution, resolution), dtype=dtype)
    orient[:, CH_LR] = lr_px
    orient[:, CH_TB] = tb_px
    np.logical_not(inside, out=orient[:, CH_BG], casting="unsafe")

    cos_lr = np.cos(angles[:, 0]).astype(dtype)[:, None, None]
    cos_tb = np.cos(angles[:, 1]).astype(dtype)[:, None, None]
    angle = np.where(pick_tb, cos_tb, cos_lr)
    angle *= inside
    if not full:
        return orient, angle, None, None

    height = np.where(tb_px, hy, np.where(lr_px, h_lr[:, None, :], 0.0)).astype(dtype, copy=False)
    side = np.where(pick_tb, side_tb[:, :, None], side_lr[:, None, :])
    labels = np.where(inside, 4 * indices[:, None, None] + side, -1)
    return orient, angle, height, labels


def rasterize_primitive(
    p: RoofPrimitive,
    resolution: int = 32,
    wall_height: float = DEFAULT_WALL_HEIGHT,
    meters_per_pixel: float = DEFAULT_METERS_PER_PIXEL,
    index: int = 0,
) -> RasterBundle:
    """Rasterize one primitive, labelling each pixel centre with its lowest facet."""
    orient, angle, height, labels = rasterize_arrays(
        [p.box], [p.ptype], [(p.angle_lr, p.angle_tb)], resolution,
        wall_height, meters_per_pixel, indices=[index],
    )
    return RasterBundle(orient[0], angle[0], height[0], labels[0], meters_per_pixel)


def rasterize_graph(graph: RoofGraph, wall_height: float = DEFAULT_WALL_HEIGHT) -> list[RasterBundle]:
    prims = graph.primitives
    orient, angle, height, labels = rasterize_arrays(
        [p.box for p in prims],
        [p.ptype for p in prims],
        [(p.angle_lr, p.angle_tb) for p in prims],
        graph.resolution,
        wall_height,
        graph.meters_per_pixel,
        indices=range(len(prims)),
    )
    return [
        RasterBundle(orient[k], angle[k], height[k], labels[k], graph.meters_per_pixel)
        for k in range(len(prims))
    ]


def _primitive_index(bundle: RasterBundle) -> int:
    fg = bundle.labels[bundle.labels >= 0]
    return int(fg.min() // 4) if fg.size else np.iinfo(np.int64).max


def composite_roof(bundles: Sequence[RasterBundle]) -> RasterBundle:
    """Keep the highest facet at every pixel.

    Height ties go to the lower primitive index (read from the labels), so
    the result does not depend on the order of ``bundles``.
    """
    if not bundles:
        raise RoofkitError("composite_roof needs at least one bundle")
    shapes = {b.shape for b in bundles}
    if len(shapes) != 1:
        raise RoofkitError(f"bundles have different resolutions: {sorted(shapes)}")
    if len(bundles) == 1:
        return bundles[0]
    ordered = sorted(bundles, key=_primitive_index)
    heights = np.stack([np.where(b.labels >= 0, b.height, -np.inf) for b in ordered])
    winner = np.argmax(heights, axis=0)  # first maximum = lowest index
    any_fg = np.isfinite(heights.max(axis=0))

    def take(arrs):
        return np.take_along_axis(np.stack(arrs), winner[None], axis=0)[0]

    orient = np.stack(
        [take([b.orientation[c] for b in ordered]) for c in range(3)]
    )
    orient[:, ~any_fg] = 0.0
    orient[CH_BG, ~any_fg] = 1.0
    angle = np.where(any_fg, take([b.angle for b in ordered]), 0.0)
    height = np.where(any_fg, take([b.height for b in ordered]), 0.0)
    labels = np.where(any_fg, take([b.labels for b in ordered]), -1)
    return RasterBundle(orient, angle, height, labels, ordered[0].meters_per_pixel)


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def find(self, a):
        self.parent.setdefault(a, a)
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            lo, hi = min(ra, rb), max(ra, rb)
            self.parent[hi] = lo


def coplanar_groups(graph: RoofGraph, threshold: float = 0.5) -> dict[int, int]:
    """Map each facet label to the smallest label of its coplanar component.

    Two facets on the same side are coplanar when that boundary is colinear
    and the matching parallelism entry is set (probability > ``threshold``).
    """
    uf = _UnionFind()
    prims = graph.primitives
    for i, p in enumerate(prims):
        for s in p.ptype.sides:
            uf.find(4 * i + s)
    for i, j in graph.pairs():
        rel = graph.relations.get(pair_key(i, j))
        if rel is None:
            continue
        shared = set(prims[i].ptype.sides) & set(prims[j].ptype.sides)
        for s in shared:
            if rel.colinear(s) > threshold and rel.parallel(s) > threshold:
                uf.union(4 * i + s, 4 * j + s)
    return {lab: uf.find(lab) for lab in list(uf.parent)}


def merge_coplanar(composite: RasterBundle, graph: RoofGraph) -> RasterBundle:
    groups = coplanar_groups(graph)
    labels = composite.labels.copy()
    for lab, root in groups.items():
        if lab != root:
            labels[composite.labels == lab] = root
    return RasterBundle(
        composite.orientation, composite.angle, composite.height, labels, composite.meters_per_pixel
    )


# ---------------------------------------------------------------------------
# Contours and polygons
# ---------------------------------------------------------------------------

# Moore neighbourhood in clockwise order (image coordinates, y down),
# starting from the west neighbour.
_NEIGHBOURS = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))


def trace_contour(mask: np.ndarray) -> list[tuple[int, int]]:
    """Outer boundary of the first 8-connected component of ``mask``.

    Moore-neighbour tracing, stopping when the first move repeats.  Returns the
    boundary pixels as (x, y) index pairs, starting at the top-most,
    left-most pixel.
    """
    mask = np.asarray(mask, dtype=bool)
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return []
    h, w = mask.shape
    start = (int(xs[0]), int(ys[0]))  # row-major: first is top-left-most

    def filled(x, y):
        return 0 <= x < w and 0 <= y < h and mask[y, x]

    # entered the start pixel from its west neighbour, which is empty
    contour = [start]
    current = start
    back_dir = 0
    limit = 4 * mask.size + 8
    while True:
        for k in range(1, 9):
            d = (back_dir + k) % 8
            nx, ny = current[0] + _NEIGHBOURS[d][0], current[1] + _NEIGHBOURS[d][1]
            if filled(nx, ny):
                # backtrack: the empty neighbour examined just before this one
                prev = (back_dir + k - 1) % 8
                px = current[0] + _NEIGHBOURS[prev][0]
                py = current[1] + _NEIGHBOURS[prev][1]
                current = (nx, ny)
                back_dir = _NEIGHBOURS.index((px - nx, py - ny))
                break
        else:
            return contour  # isolated pixel
        # stop once the first step (start -> second pixel) repeats
        if len(contour) >= 2 and contour[-1] == start and current == contour[1]:
            return contour[:-1]
        contour.append(current)
        if len(contour) > limit:
            raise RoofkitError("contour tracing did not terminate")


def simplify_chain(points: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """Drop points interior to straight runs (horizontal, vertical or diagonal)."""
    pts = list(points)
    n = len(pts)
    if n <= 2:
        return pts
    out = []
    for k in range(n):
        a, b, c = pts[k - 1], pts[k], pts[(k + 1) % n]
        d1 = (b[0] - a[0], b[1] - a[1])
        d2 = (c[0] - b[0], c[1] - b[1])
        if d1 != d2:
            out.append(b)
    return out


def rectilinear_corners(chain: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """Keep chain points that end an axis-aligned segment (shared x or y with a neighbour)."""
    n = len(chain)
    if n < 2:
        return list(chain)
    keep = [False] * n
    for k in range(n):
        a, b = chain[k], chain[(k + 1) % n]
        if a[0] == b[0] or a[1] == b[1]:
            keep[k] = keep[(k + 1) % n] = True
    return [p for p, kept in zip(chain, keep) if kept]


def square_concave_steps(corners: Sequence[tuple[int, int]], mask: np.ndarray) -> list[tuple[int, int]]:
    """Replace a unit diagonal between perpendicular axis-aligned runs by its corner pixel.

    An 8-connected trace cuts concave corners diagonally; the missing corner
    pixel belongs to the mask, which tells it apart from a convex cut.
    """
    pts = list(corners)
    n = len(pts)
    if n < 4:
        return pts
    drop: set[int] = set()
    swap: dict[int, tuple[int, int]] = {}
    for k in range(n):
        prev, a, b, nxt = pts[k - 1], pts[k], pts[(k + 1) % n], pts[(k + 2) % n]
        if abs(a[0] - b[0]) != 1 or abs(a[1] - b[1]) != 1 or k in drop or k in swap:
            continue
        if prev[1] == a[1] and prev[0] != a[0] and nxt[0] == b[0] and nxt[1] != b[1]:
            c = (b[0], a[1])
        elif prev[0] == a[0] and prev[1] != a[1] and nxt[1] == b[1] and nxt[0] != b[0]:
            c = (a[0], b[1])
        else:
            continue
        if mask[c[1], c[0]]:
            swap[k] = c
            drop.add((k + 1) % n)
    return [swap.get(k, p) for k, p in enumerate(pts) if k not in drop]


def mask_corners(mask: np.ndarray) -> list[tuple[int, int]]:
    """Polygon corners (x, y pixel indices) of a single-component facet mask."""
    return square_concave_steps(rectilinear_corners(simplify_chain(trace_contour(mask))), mask)


_EIGHT = np.ones((3, 3), dtype=int)


def _simple_corners(region: np.ndarray):
    corners = mask_corners(region)
    if len(corners) < 3:
        return None, f"only {len(corners)} corners"
    if not polygon_is_simple(np.array(corners, dtype=float)):
        return None, "contour polygon is not simple"
    return corners, ""


def _region_polygons(region: np.ndarray):
    """Corner lists for one connected facet region.

    Pixel-centre contours of one-pixel-thin parts (slivers left by occlusion
    or the tips of hip triangles) retrace themselves.  When that happens the
    region is opened with a 3x3 square, which removes only parts thinner
    than three pixels, and each surviving piece is traced on its own.
    """
    corners, why = _simple_corners(region)
    if corners is not None:
        return [(region, corners)]
    opened = ndimage.binary_opening(region, structure=_EIGHT)
    pieces, count = ndimage.label(opened, structure=_EIGHT)
    out = []
    for c in range(1, count + 1):
        piece = pieces == c
        corners, why2 = _simple_corners(piece)
        if corners is None:
            log.warning("dropping facet piece: %s", why2)
            continue
        out.append((piece, corners))
    if not out:
        log.warning("dropping facet region: %s", why)
    return out


def extract_facet_polygons(composite: RasterBundle, dimensionality: int = 2) -> RoofModel:
    """Polygonal facets of a composite raster, one per connected facet region.

    Corners sit at the pixel centres of the contour corner pixels and are
    reported in meters; in 3-D mode their z is the height-map value there.
    """
    if dimensionality not in (2, 3):
        raise RoofkitError(f"dimensionality must be 2 or 3, got {dimensionality}")
    labels = composite.labels
    if not np.any(labels >= 0):
        raise RoofkitError("raster has no facet pixels")
    mpp = composite.meters_per_pixel
    facets = []
    for lab in np.unique(labels[labels >= 0]):
        components, count = ndimage.label(labels == lab, structure=_EIGHT)
        for c in range(1, count + 1):
            for region, corners in _region_polygons(components == c):
                xy = np.array(corners, dtype=float)
                verts = (xy + 0.5) * mpp
                if dimensionality == 3:
                    z = composite.height[xy[:, 1].astype(int), xy[:, 0].astype(int)]
                    verts = np.column_stack([verts, z])
                angle = float(np.arccos(np.clip(composite.angle[region].mean(), 0.0, 1.0)))
                facets.append(Facet(verts, angle))
    if not facets:
        raise RoofkitError("no facet survived polygon extraction")
    return RoofModel(tuple(facets))


# ---------------------------------------------------------------------------
# Normal maps
# ---------------------------------------------------------------------------

def facet_normals(bundle: RasterBundle) -> np.ndarray:
    """Unit surface normals (H, W, 3) as (x, y, z) with y pointing down the image; 0 on background."""
    labels = bundle.labels
    fg = labels >= 0
    theta = np.arccos(np.clip(bundle.angle, 0.0, 1.0))
    s, c = np.sin(theta), np.cos(theta)
    side = np.where(fg, labels % 4, -1)
    n = np.zeros(labels.shape + (3,))
    n[..., 0] = np.where(side == LEFT, -s, np.where(side == RIGHT, s, 0.0))
    n[..., 1] = np.where(side == TOP, -s, np.where(side == BOTTOM, s, 0.0))
    n[..., 2] = c
    n[~fg] = 0.0
    return n


def render_normal_map(composite: RasterBundle) -> np.ndarray:
    """RGB uint8 image: normal mapped by (n + 1) / 2 to [0, 255]; background white."""
    n = facet_normals(composite)
    rgb = np.floor((n + 1.0) / 2.0 * 255.0 + 0.5).astype(np.uint8)
    rgb[composite.labels < 0] = 255
    return rgb


def roof_raster(graph: RoofGraph, wall_height: float = DEFAULT_WALL_HEIGHT, merge: bool = True) -> RasterBundle:
    """Rasterize, composite and (optionally) merge coplanar facets of a whole graph."""
    comp = composite_roof(rasterize_graph(graph, wall_height))
    return merge_coplanar(comp, graph) if merge else comp


def graph_to_model(graph: RoofGraph, dimensionality: int = 2, wall_height: float = DEFAULT_WALL_HEIGHT) -> RoofModel:
    return extract_facet_polygons(roof_raster(graph, wall_height), dimensionality)
