"""Roof primitives, relation graphs, raster bundles and polygonal models.

Coordinates follow the image convention: x grows to the right, y grows
downward, so the "top" boundary of a box is its smaller y.  Boxes are
stored as ``(left, top, right, bottom)`` in continuous pixel units.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_RESOLUTION = 32
DEFAULT_METERS_PER_PIXEL = 0.5

# Side indices shared by facet labels, relation vectors and plane lists.
LEFT, RIGHT, TOP, BOTTOM = 0, 1, 2, 3
SIDES = ("left", "right", "top", "bottom")

# Orientation channel layout of a RasterBundle.
CH_LR, CH_TB, CH_BG = 0, 1, 2


class RoofkitError(ValueError):
    """Domain error raised by every roofkit operation."""


class ValidationError(RoofkitError):
    pass


class PrimitiveType(enum.Enum):
    HORIZONTAL_GABLE = "h_gable"
    VERTICAL_GABLE = "v_gable"
    HORIZONTAL_HIP = "h_hip"
    VERTICAL_HIP = "v_hip"

    @property
    def is_hip(self) -> bool:
        return self in (PrimitiveType.HORIZONTAL_HIP, PrimitiveType.VERTICAL_HIP)

    @property
    def is_horizontal(self) -> bool:
        return self in (PrimitiveType.HORIZONTAL_GABLE, PrimitiveType.HORIZONTAL_HIP)

    @property
    def sides(self) -> tuple[int, ...]:
        """Facet sides in tie-break preference order (dominant facets first)."""
        if self is PrimitiveType.HORIZONTAL_GABLE:
            return (TOP, BOTTOM)
        if self is PrimitiveType.VERTICAL_GABLE:
            return (LEFT, RIGHT)
        if self is PrimitiveType.HORIZONTAL_HIP:
            return (TOP, BOTTOM, LEFT, RIGHT)
        return (LEFT, RIGHT, TOP, BOTTOM)

    @property
    def has_lr(self) -> bool:
        return LEFT in self.sides

    @property
    def has_tb(self) -> bool:
        return TOP in self.sides

    def swapped(self) -> "PrimitiveType":
        """The same covering with its ridge axis rotated by 90 degrees."""
        return _SWAP[self]

    @classmethod
    def from_parts(cls, horizontal: bool, hip: bool) -> "PrimitiveType":
        if hip:
            return cls.HORIZONTAL_HIP if horizontal else cls.VERTICAL_HIP
        return cls.HORIZONTAL_GABLE if horizontal else cls.VERTICAL_GABLE


_SWAP = {
    PrimitiveType.HORIZONTAL_GABLE: PrimitiveType.VERTICAL_GABLE,
    PrimitiveType.VERTICAL_GABLE: PrimitiveType.HORIZONTAL_GABLE,
    PrimitiveType.HORIZONTAL_HIP: PrimitiveType.VERTICAL_HIP,
    PrimitiveType.VERTICAL_HIP: PrimitiveType.HORIZONTAL_HIP,
}


@dataclass(frozen=True)
class RoofPrimitive:
    """Axis-aligned rectangle with a gable or hip covering.

    ``angle_lr`` is shared by the left and right facets, ``angle_tb`` by the
    top and bottom ones.  A horizontal gable ignores ``angle_lr`` and a
    vertical gable ignores ``angle_tb``.
    """

    left: float
    top: float
    right: float
    bottom: float
    ptype: PrimitiveType
    angle_lr: float = 0.0
    angle_tb: float = 0.0

    @property
    def box(self) -> tuple[float, float, float, float]:
        return (self.left, self.top, self.right, self.bottom)

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def height(self) -> float:
        return self.bottom - self.top

    def coord(self, side: int) -> float:
        return self.box_by_side[side]

    @property
    def box_by_side(self) -> tuple[float, float, float, float]:
        """Boundary coordinates in side order (left, right, top, bottom)."""
        return (self.left, self.right, self.top, self.bottom)

    def angle_for(self, side: int) -> float:
        return self.angle_lr if side in (LEFT, RIGHT) else self.angle_tb

    def with_box(self, box: Sequence[float]) -> "RoofPrimitive":
        l, t, r, b = (float(v) for v in box)
        return replace(self, left=l, top=t, right=r, bottom=b)

    def validate(self) -> None:
        if not (self.left < self.right and self.top < self.bottom):
            raise ValidationError(f"degenerate rectangle {self.box}")
        for name in ("angle_lr", "angle_tb"):
            a = getattr(self, name)
            if not (0.0 <= a < math.pi / 2):
                raise ValidationError(f"{name}={a!r} outside [0, pi/2)")


@dataclass(frozen=True)
class RelationVector:
    """Pairwise relation probabilities: four boundary colinearities and two facet parallelisms."""

    colinear_left: float = 0.0
    colinear_right: float = 0.0
    colinear_top: float = 0.0
    colinear_bottom: float = 0.0
    parallel_lr: float = 0.0
    parallel_tb: float = 0.0

    def as_tuple(self) -> tuple[float, ...]:
        return (
            self.colinear_left,
            self.colinear_right,
            self.colinear_top,
            self.colinear_bottom,
            self.parallel_lr,
            self.parallel_tb,
        )

    @classmethod
    def from_values(cls, values: Iterable[float]) -> "RelationVector":
        vals = [float(v) for v in values]
        if len(vals) != 6:
            raise ValidationError(f"relation vector needs 6 entries, got {len(vals)}")
        return cls(*vals)

    def colinear(self, side: int) -> float:
        return self.as_tuple()[side]

    def parallel(self, side: int) -> float:
        return self.parallel_lr if side in (LEFT, RIGHT) else self.parallel_tb

    def validate(self) -> None:
        for v in self.as_tuple():
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"probability out of range: {v!r}")


def pair_key(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class RoofGraph:
    primitives: tuple[RoofPrimitive, ...]
    relations: Mapping[tuple[int, int], RelationVector] = field(default_factory=dict)
    resolution: int = DEFAULT_RESOLUTION
    meters_per_pixel: float = DEFAULT_METERS_PER_PIXEL

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(
            self, "relations", {pair_key(*k): v for k, v in dict(self.relations).items()}
        )

    def __len__(self) -> int:
        return len(self.primitives)

    def relation(self, i: int, j: int) -> RelationVector:
        return self.relations[pair_key(i, j)]

    def pairs(self) -> list[tuple[int, int]]:
        return list(combinations(range(len(self.primitives)), 2))

    def boxes(self) -> np.ndarray:
        return np.array([p.box for p in self.primitives], dtype=float).reshape(-1, 4)


def validate_graph(graph: RoofGraph) -> RoofGraph:
    """Return ``graph`` unchanged if every invariant holds, else raise on the first violation."""
    if graph.resolution <= 0 or graph.meters_per_pixel <= 0:
        raise ValidationError("resolution and meters_per_pixel must be positive")
    for idx, p in enumerate(graph.primitives):
        try:
            p.validate()
        except ValidationError as exc:
            raise ValidationError(f"primitive {idx}: {exc}") from None
    n = len(graph.primitives)
    for key in graph.relations:
        i, j = key
        if not (0 <= i < j < n):
            raise ValidationError(f"relation for unknown pair {key}")
    for key in graph.pairs():
        if key not in graph.relations:
            raise ValidationError(f"incomplete relation map: missing pair {key}")
        graph.relations[key].validate()
    return graph


@dataclass(frozen=True, eq=False)
class RasterBundle:
    """Per-pixel roof rasters.

    orientation: (3, H, W) probabilities over (left/right, top/bottom, background)
    angle: (H, W) cosine of the facet angle, 0 on background
    height: (H, W) surface height in meters, 0 on background
    labels: (H, W) facet instance ids ``4 * primitive + side``, -1 on background
    """

    orientation: np.ndarray
    angle: np.ndarray
    height: np.ndarray
    labels: np.ndarray
    meters_per_pixel: float = DEFAULT_METERS_PER_PIXEL

    def __post_init__(self):
        for name in ("orientation", "angle", "height", "labels"):
            arr = np.array(getattr(self, name), copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.orientation.ndim != 3 or self.orientation.shape[0] != 3:
            raise ValidationError(f"orientation must be (3, H, W), got {self.orientation.shape}")
        shape = self.orientation.shape[1:]
        for name in ("angle", "height", "labels"):
            if getattr(self, name).shape != shape:
                raise ValidationError(f"{name} shape {getattr(self, name).shape} != {shape}")

    @property
    def resolution(self) -> int:
        return self.orientation.shape[-1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.orientation.shape[1:]

    @property
    def background(self) -> np.ndarray:
        return self.orientation[CH_BG]

    def check(self, atol: float = 1e-6) -> None:
        if not np.allclose(self.orientation.sum(axis=0), 1.0, atol=atol):
            raise ValidationError("orientation channels do not sum to 1")
        if self.angle.min() < 0 or self.angle.max() > 1:
            raise ValidationError("angle channel outside [0, 1]")
        if np.any(self.angle[self.background == 1.0] != 0):
            raise ValidationError("angle channel nonzero on background")

    def __eq__(self, other):
        if not isinstance(other, RasterBundle):
            return NotImplemented
        return (
            self.meters_per_pixel == other.meters_per_pixel
            and np.array_equal(self.orientation, other.orientation)
            and np.array_equal(self.angle, other.angle)
            and np.array_equal(self.height, other.height)
            and np.array_equal(self.labels, other.labels)
        )


def empty_bundle(resolution: int, meters_per_pixel: float = DEFAULT_METERS_PER_PIXEL) -> RasterBundle:
    orient = np.zeros((3, resolution, resolution))
    orient[CH_BG] = 1.0
    zeros = np.zeros((resolution, resolution))
    return RasterBundle(orient, zeros, zeros, np.full((resolution, resolution), -1), meters_per_pixel)


@dataclass(frozen=True, eq=False)
class Facet:
    vertices: np.ndarray
    plane_angle: float = 0.0

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float, copy=True)
        if v.ndim != 2 or v.shape[1] not in (2, 3):
            raise ValidationError(f"facet vertices must be (n, 2) or (n, 3), got {v.shape}")
        if len(v) < 3:
            raise ValidationError(f"facet needs at least 3 vertices, got {len(v)}")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def __len__(self) -> int:
        return len(self.vertices)

    def __eq__(self, other):
        if not isinstance(other, Facet):
            return NotImplemented
        return self.plane_angle == other.plane_angle and np.array_equal(self.vertices, other.vertices)

    def is_simple(self) -> bool:
        return polygon_is_simple(self.vertices[:, :2])


@dataclass(frozen=True)
class RoofModel:
    facets: tuple[Facet, ...]

    def __post_init__(self):
        object.__setattr__(self, "facets", tuple(self.facets))
        if not self.facets:
            raise ValidationError("roof model needs at least one facet")

    def __len__(self) -> int:
        return len(self.facets)

    @property
    def dim(self) -> int:
        return self.facets[0].dim


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _on_segment(p, q, r) -> bool:
    return min(p[0], r[0]) <= q[0] <= max(p[0], r[0]) and min(p[1], r[1]) <= q[1] <= max(p[1], r[1])


def _segments_intersect(p1, p2, p3, p4) -> bool:
    d1, d2 = _cross(p3, p4, p1), _cross(p3, p4, p2)
    d3, d4 = _cross(p1, p2, p3), _cross(p1, p2, p4)
    if ((d1 > 0 > d2) or (d1 < 0 < d2)) and ((d3 > 0 > d4) or (d3 < 0 < d4)):
        return True
    return (
        (d1 == 0 and _on_segment(p3, p1, p4))
        or (d2 == 0 and _on_segment(p3, p2, p4))
        or (d3 == 0 and _on_segment(p1, p3, p2))
        or (d4 == 0 and _on_segment(p1, p4, p2))
    )


def polygon_is_simple(points) -> bool:
    """True if the closed polygon has no repeated vertices and no crossing edges."""
    pts = [tuple(p) for p in np.asarray(points, dtype=float)[:, :2]]
    n = len(pts)
    if n < 3 or len(set(pts)) != n:
        return False
    for i in range(n):
        a1, a2 = pts[i], pts[(i + 1) % n]
        a3 = pts[(i + 2) % n]
        # adjacent edges folding back onto each other
        cross = (a2[0] - a1[0]) * (a3[1] - a2[1]) - (a2[1] - a1[1]) * (a3[0] - a2[0])
        dot = (a2[0] - a1[0]) * (a3[0] - a2[0]) + (a2[1] - a1[1]) * (a3[1] - a2[1])
        if cross == 0 and dot < 0:
            return False
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if _segments_intersect(a1, a2, pts[j], pts[(j + 1) % n]):
                return False
    return True


# ---------------------------------------------------------------------------
# Symmetry group
# ---------------------------------------------------------------------------

# Each of the eight symmetries of the square is a signed permutation matrix
# acting on (x, y); the offset keeps [0, R]^2 mapped onto itself.
_OPS = {
    "identity": ((1, 0), (0, 1)),
    "rot90": ((0, -1), (1, 0)),
    "rot180": ((-1, 0), (0, -1)),
    "rot270": ((0, 1), (-1, 0)),
    "mirror_x": ((-1, 0), (0, 1)),
    "mirror_y": ((1, 0), (0, -1)),
    "transpose": ((0, 1), (1, 0)),
    "anti_transpose": ((0, -1), (-1, 0)),
}
SYMMETRY_OPS = tuple(_OPS)
_BY_MATRIX = {m: name for name, m in _OPS.items()}

_SIDE_NORMALS = {LEFT: (-1, 0), RIGHT: (1, 0), TOP: (0, -1), BOTTOM: (0, 1)}
_NORMAL_SIDES = {v: k for k, v in _SIDE_NORMALS.items()}


def _matrix(op: str) -> np.ndarray:
    try:
        return np.array(_OPS[op], dtype=int)
    except KeyError:
        raise RoofkitError(f"unknown symmetry op {op!r}") from None


def compose_ops(*ops: str) -> str:
    """Name of the symmetry equal to applying ``ops`` left to right."""
    m = np.eye(2, dtype=int)
    for op in ops:
        m = _matrix(op) @ m
    return _BY_MATRIX[tuple(map(tuple, m.tolist()))]


def inverse_op(op: str) -> str:
    m = _matrix(op).T  # orthogonal
    return _BY_MATRIX[tuple(map(tuple, m.tolist()))]


def side_map(op: str) -> dict[int, int]:
    m = _matrix(op)
    return {s: _NORMAL_SIDES[tuple((m @ np.array(n)).tolist())] for s, n in _SIDE_NORMALS.items()}


def _swaps_axes(op: str) -> bool:
    return _matrix(op)[0, 0] == 0


def transform_points(points, op: str, size: float) -> np.ndarray:
    """Apply a symmetry to (x, y) points of a ``size`` x ``size`` frame."""
    m = _matrix(op)
    pts = np.asarray(points, dtype=float)
    centre = size / 2.0
    return (pts - centre) @ m.T + centre


def _transform_coords(values: Sequence[float], op: str, size: float) -> dict[int, float]:
    """Map the four side coordinates of a box through ``op``.

    Works on boundary coordinates directly so integral boxes stay integral:
    a reflected coordinate is ``size - c`` rather than a centred round-trip.
    """
    m = _matrix(op)
    smap = side_map(op)
    out = {}
    for s, c in enumerate(values):
        n = _SIDE_NORMALS[s]
        axis_in = 0 if n[0] else 1
        new_side = smap[s]
        axis_out = 0 if _SIDE_NORMALS[new_side][0] else 1
        sign = m[axis_out, axis_in]
        out[new_side] = c if sign > 0 else size - c
    return out


def transform_primitive(p: RoofPrimitive, op: str, size: float) -> RoofPrimitive:
    new = _transform_coords(p.box_by_side, op, size)
    ptype, a_lr, a_tb = p.ptype, p.angle_lr, p.angle_tb
    if _swaps_axes(op):
        ptype, a_lr, a_tb = ptype.swapped(), a_tb, a_lr
    return RoofPrimitive(new[LEFT], new[TOP], new[RIGHT], new[BOTTOM], ptype, a_lr, a_tb)


def transform_relation(v: RelationVector, op: str) -> RelationVector:
    vals = v.as_tuple()
    smap = side_map(op)
    out = [0.0] * 6
    for s in range(4):
        out[smap[s]] = vals[s]
    out[4], out[5] = (vals[5], vals[4]) if _swaps_axes(op) else (vals[4], vals[5])
    return RelationVector(*out)


def transform_graph(graph: RoofGraph, op: str) -> RoofGraph:
    """Apply one of the eight square symmetries (see ``SYMMETRY_OPS``) to a graph."""
    size = float(graph.resolution)
    prims = tuple(transform_primitive(p, op, size) for p in graph.primitives)
    rels = {k: transform_relation(v, op) for k, v in graph.relations.items()}
    return replace(graph, primitives=prims, relations=rels)


def transform_bundle(bundle: RasterBundle, op: str) -> RasterBundle:
    """Resample a raster bundle through a square symmetry (exact pixel permutation)."""
    h, w = bundle.shape
    if h != w:
        raise RoofkitError("symmetry ops need a square raster")
    m = _matrix(op)
    inv = m.T
    jj, ii = np.mgrid[0:h, 0:w]
    centres = np.stack([ii + 0.5, jj + 0.5], axis=-1) - h / 2.0
    src = centres @ inv.T + h / 2.0
    si = np.floor(src[..., 0]).astype(int)
    sj = np.floor(src[..., 1]).astype(int)

    orient = bundle.orientation[:, sj, si]
    if _swaps_axes(op):
        orient = orient[[CH_TB, CH_LR, CH_BG]]
    labels = bundle.labels[sj, si]
    smap = side_map(op)
    side_lut = np.array([smap[s] for s in range(4)])
    fg = labels >= 0
    labels = np.where(fg, (labels // 4) * 4 + side_lut[labels % 4], -1)
    return RasterBundle(
        orient, bundle.angle[sj, si], bundle.height[sj, si], labels, bundle.meters_per_pixel
    )
