"""Seeded procedural sampler of relation-consistent roof graphs."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import (
    DEFAULT_METERS_PER_PIXEL,
    DEFAULT_RESOLUTION,
    PrimitiveType,
    RoofGraph,
    RoofkitError,
    RoofPrimitive,
    validate_graph,
)
from .raster import rasterize_primitive
from .relations import DEFAULT_TOL_DEG, DEFAULT_TOL_PX, detect_graph, snap_ground_truth
from .vectorize import classify_type

COUNTS = (2, 3, 4, 5)
DEFAULT_COUNT_DISTRIBUTION = (0.30, 0.51, 0.14, 0.05)
_TYPES = tuple(PrimitiveType)


class SamplerError(RoofkitError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    count_distribution: tuple[float, ...] = DEFAULT_COUNT_DISTRIBUTION
    angle_range: tuple[float, float] = (math.radians(15.0), math.radians(45.0))
    min_box_side: int = 6
    max_box_side: int = 24
    overlap_policy: str = "require-overlap"
    snap_probability: float = 0.5
    resolution: int = DEFAULT_RESOLUTION
    meters_per_pixel: float = DEFAULT_METERS_PER_PIXEL
    tol_px: float = DEFAULT_TOL_PX
    tol_deg: float = DEFAULT_TOL_DEG
    max_retries: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "count_distribution", tuple(float(p) for p in self.count_distribution))
        object.__setattr__(self, "angle_range", tuple(float(a) for a in self.angle_range))
        if len(self.count_distribution) != len(COUNTS):
            raise RoofkitError("count_distribution needs one probability per count in (2, 3, 4, 5)")
        if any(p < 0 for p in self.count_distribution) or not math.isclose(sum(self.count_distribution), 1.0, abs_tol=1e-9):
            raise RoofkitError("count_distribution must be nonnegative and sum to 1")
        lo, hi = self.angle_range
        if not (0 < lo <= hi < math.pi / 2):
            raise RoofkitError("angle_range must lie inside (0, pi/2)")
        if self.overlap_policy not in ("require-overlap", "free"):
            raise RoofkitError(f"unknown overlap policy {self.overlap_policy!r}")
        if not (2 <= self.min_box_side <= self.max_box_side <= self.resolution):
            raise RoofkitError("need 2 <= min_box_side <= max_box_side <= resolution")

    def to_dict(self) -> dict:
        return {
            "count_distribution": list(self.count_distribution),
            "angle_range": list(self.angle_range),
            "min_box_side": self.min_box_side,
            "max_box_side": self.max_box_side,
            "overlap_policy": self.overlap_policy,
            "snap_probability": self.snap_probability,
            "resolution": self.resolution,
            "meters_per_pixel": self.meters_per_pixel,
            "tol_px": self.tol_px,
            "tol_deg": self.tol_deg,
            "max_retries": self.max_retries,
            "seed": self.seed,
        }


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def sample_count(rng: np.random.Generator, config: SamplerConfig = SamplerConfig()) -> int:
    return int(rng.choice(COUNTS, p=config.count_distribution))


def sample_counts(rng: np.random.Generator, size: int, config: SamplerConfig = SamplerConfig()) -> np.ndarray:
    return rng.choice(COUNTS, size=size, p=config.count_distribution)


def _overlaps(a, b) -> bool:
    return min(a[2], b[2]) > max(a[0], b[0]) and min(a[3], b[3]) > max(a[1], b[1])


def _place_box(rng, placed, config: SamplerConfig):
    res, lo, hi = config.resolution, config.min_box_side, config.max_box_side
    w = int(rng.integers(lo, hi + 1))
    h = int(rng.integers(lo, hi + 1))
    if not placed or config.overlap_policy == "free":
        x = int(rng.integers(0, res - w + 1))
        y = int(rng.integers(0, res - h + 1))
        return [x, y, x + w, y + h]
    anchor = placed[int(rng.integers(len(placed)))]
    # positions whose box overlaps the anchor with positive area
    x_lo, x_hi = max(0, anchor[0] - w + 1), min(res - w, anchor[2] - 1)
    y_lo, y_hi = max(0, anchor[1] - h + 1), min(res - h, anchor[3] - 1)
    if x_lo > x_hi or y_lo > y_hi:
        return None
    x = int(rng.integers(x_lo, x_hi + 1))
    y = int(rng.integers(y_lo, y_hi + 1))
    return [x, y, x + w, y + h]


def _snap_sides(rng, box, placed, config: SamplerConfig):
    """With probability ``snap_probability`` per side, copy a placed box's boundary."""
    if not placed:
        return box
    box = list(box)
    for k in range(4):  # l, t, r, b
        if rng.random() >= config.snap_probability:
            continue
        src = placed[int(rng.integers(len(placed)))]
        trial = list(box)
        trial[k] = src[k]
        if trial[2] - trial[0] >= config.min_box_side and trial[3] - trial[1] >= config.min_box_side:
            box = trial
    return box


def _draw_angle(rng, existing, config: SamplerConfig) -> float:
    if existing and rng.random() < config.snap_probability:
        return float(existing[int(rng.integers(len(existing)))])
    lo, hi = config.angle_range
    return float(rng.uniform(lo, hi))


def _hip_ok(p: RoofPrimitive, config: SamplerConfig) -> bool:
    """A hip is kept only if its own raster classifies back to its type."""
    if not p.ptype.is_hip:
        return True
    bundle = rasterize_primitive(p, config.resolution, meters_per_pixel=config.meters_per_pixel)
    return classify_type(bundle.orientation) is p.ptype


def _overlap_ok(graph: RoofGraph, config: SamplerConfig) -> bool:
    """Every primitive after the first overlaps an earlier one (snapping can undo this)."""
    if config.overlap_policy != "require-overlap":
        return True
    boxes = [p.box for p in graph.primitives]
    return all(any(_overlaps(b, q) for q in boxes[:k]) for k, b in enumerate(boxes) if k)


def _draw_graph(rng, config: SamplerConfig, n: int) -> RoofGraph | None:
    placed: list[list[int]] = []
    prims: list[RoofPrimitive] = []
    lr_angles: list[float] = []
    tb_angles: list[float] = []
    for _ in range(n):
        for _attempt in range(20):
            box = _place_box(rng, placed, config)
            if box is None:
                continue
            box = _snap_sides(rng, box, placed, config)
            if config.overlap_policy == "require-overlap" and placed and not any(_overlaps(box, q) for q in placed):
                continue
            ptype = _TYPES[int(rng.integers(len(_TYPES)))]
            a_lr = _draw_angle(rng, lr_angles, config) if ptype.has_lr else 0.0
            a_tb = _draw_angle(rng, tb_angles, config) if ptype.has_tb else 0.0
            p = RoofPrimitive(*map(float, box), ptype, a_lr, a_tb)
            if _hip_ok(p, config):
                break
        else:
            return None
        placed.append(box)
        prims.append(p)
        if ptype.has_lr:
            lr_angles.append(a_lr)
        if ptype.has_tb:
            tb_angles.append(a_tb)
    return RoofGraph(tuple(prims), {}, config.resolution, config.meters_per_pixel)


def consistent_relations(graph: RoofGraph, tol_px: float, tol_deg: float, max_rounds: int = 20) -> RoofGraph | None:
    """Detect and snap until the relation table is a fixed point.

    At the fixed point every detected relation holds with exact equality and
    every undetected one is outside tolerance, so detection at ``tol`` and at
    zero tolerance agree.
    """
    for _ in range(max_rounds):
        rel = detect_graph(graph, tol_px, tol_deg)
        snapped = snap_ground_truth(replace(graph, relations=rel))
        if snapped.primitives == graph.primitives:
            return snapped
        graph = snapped
    return None


def sample_graph(rng: np.random.Generator, config: SamplerConfig = SamplerConfig()) -> RoofGraph:
    """Draw one valid, relation-consistent graph; raises SamplerError after ``max_retries`` rejections."""
    # the count is drawn once so that rejections cannot skew the count statistics
    n = sample_count(rng, config)
    for _ in range(config.max_retries):
        g = _draw_graph(rng, config, n)
        if g is None:
            continue
        g = consistent_relations(g, config.tol_px, config.tol_deg)
        if g is None:
            continue
        try:
            validate_graph(g)
        except RoofkitError:
            continue
        if _overlap_ok(g, config) and all(_hip_ok(p, config) for p in g.primitives):
            return g
    raise SamplerError(f"could not place a valid graph after {config.max_retries} attempts (seed {config.seed})")


def sample_graphs(count: int, config: SamplerConfig = SamplerConfig()) -> list[RoofGraph]:
    rng = make_rng(config.seed)
    return [sample_graph(rng, config) for _ in range(count)]
