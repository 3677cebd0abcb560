"""Recursive Minimum Matching Distance between sets of polygonal roof models.

Distances nest four levels deep: vertex (Euclidean), facet, model and set.
Every level greedily matches the elements of its first argument to those of
the second, one-to-one, on symmetrized costs; elements of the first
argument left without a partner cost ``penalty`` each; the sum is divided by
the size of the first argument.  The result is therefore asymmetric.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .model import Facet, RoofkitError, RoofModel

SQUARE_SIDE = 16.0
DEFAULT_PENALTY = SQUARE_SIDE * math.sqrt(2.0)


@dataclass(frozen=True)
class MatchResult:
    pairs: list[tuple[int, int, float]] = field(default_factory=list)
    unmatched_a: list[int] = field(default_factory=list)

    @property
    def total(self) -> float:
        return math.fsum(c for _, _, c in self.pairs)


def greedy_match(cost) -> MatchResult:
    """Mutually exclusive matching by repeatedly taking the global minimum.

    Ties are broken by (row, column) order.  Stops when either side runs out.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise RoofkitError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)) or np.any(cost < 0):
        raise RoofkitError("costs must be finite and nonnegative")
    return _greedy(cost)


def _greedy(cost: np.ndarray) -> MatchResult:
    n_a, n_b = cost.shape
    # tuples sort by (cost, row, col), which is the tie-break order
    flat = cost.ravel().tolist()
    order = sorted(zip(flat, _row_index(n_a, n_b), _col_index(n_a, n_b)))
    used_a = [False] * n_a
    used_b = [False] * n_b
    pairs = []
    limit = min(n_a, n_b)
    for c, i, j in order:
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = used_b[j] = True
        pairs.append((i, j, c))
        if len(pairs) == limit:
            break
    return MatchResult(pairs, [i for i in range(n_a) if not used_a[i]])


def _row_index(n_a: int, n_b: int) -> list[int]:
    return [i for i in range(n_a) for _ in range(n_b)]


def _col_index(n_a: int, n_b: int) -> list[int]:
    return list(range(n_b)) * n_a


def _matched_mean(cost: np.ndarray, penalty: float) -> float:
    m = _greedy(cost)
    return (m.total + penalty * len(m.unmatched_a)) / cost.shape[0]


def vertex_distance(v1, v2) -> float:
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if v1.shape != v2.shape:
        raise RoofkitError(f"vertex dimensions differ: {v1.shape} vs {v2.shape}")
    return float(np.linalg.norm(v1 - v2))


def _vertices(f) -> np.ndarray:
    return f.vertices if isinstance(f, Facet) else np.asarray(f, dtype=float)


def facet_distance(f1, f2, penalty: float = DEFAULT_PENALTY) -> float:
    """Mean matched vertex distance from f1 into f2; unmatched f1 vertices cost ``penalty``."""
    a, b = _vertices(f1), _vertices(f2)
    if len(a) == 0 or len(b) == 0:
        raise RoofkitError("facets must have vertices")
    if a.shape[1] != b.shape[1]:
        raise RoofkitError("facets have different dimensionality")
    return _matched_mean(cdist(a, b), penalty)


def _facet_cost_matrix(m1: RoofModel, m2: RoofModel, penalty: float) -> np.ndarray:
    c = np.empty((len(m1), len(m2)))
    for i, f1 in enumerate(m1.facets):
        for j, f2 in enumerate(m2.facets):
            c[i, j] = (facet_distance(f1, f2, penalty) + facet_distance(f2, f1, penalty)) / 2.0
    return c


def model_distance(m1: RoofModel, m2: RoofModel, penalty: float = DEFAULT_PENALTY) -> float:
    return _matched_mean(_facet_cost_matrix(m1, m2, penalty), penalty)


def symmetric_model_cost(m1: RoofModel, m2: RoofModel, penalty: float = DEFAULT_PENALTY) -> float:
    return (model_distance(m1, m2, penalty) + model_distance(m2, m1, penalty)) / 2.0


def normalize_model(m: RoofModel, square_side: float = SQUARE_SIDE) -> RoofModel:
    """Scale and translate uniformly so the footprint box fits, centred, in the square."""
    allv = np.concatenate([f.vertices for f in m.facets])
    lo = allv[:, :2].min(axis=0)
    hi = allv[:, :2].max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0:
        raise RoofkitError("cannot normalize a model with zero footprint extent")
    s = square_side / extent
    offset = (square_side - (hi - lo) * s) / 2.0
    facets = []
    for f in m.facets:
        v = f.vertices.copy()
        v[:, :2] = (v[:, :2] - lo) * s + offset
        if v.shape[1] == 3:
            v[:, 2] = v[:, 2] * s
        facets.append(Facet(v, f.plane_angle))
    return RoofModel(tuple(facets))


def model_cost_matrix(
    s1: Sequence[RoofModel], s2: Sequence[RoofModel], penalty: float = DEFAULT_PENALTY, threads: int = 1
) -> np.ndarray:
    """Symmetric model costs for every (s1, s2) pair; rows computed in parallel."""

    def row(m1):
        return [symmetric_model_cost(m1, m2, penalty) for m2 in s2]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(row, s1))
    else:
        rows = [row(m) for m in s1]
    return np.array(rows, dtype=float).reshape(len(s1), len(s2))


def set_distance(
    s1: Sequence[RoofModel], s2: Sequence[RoofModel], penalty: float = DEFAULT_PENALTY, threads: int = 1
) -> float:
    """Set-level distance from ``s1`` (reference set) to ``s2``; models must be pre-normalized."""
    if not s1 or not s2:
        raise RoofkitError("both model sets must be nonempty")
    return _matched_mean(model_cost_matrix(s1, s2, penalty, threads), penalty)


def project(m: RoofModel, dim: int) -> RoofModel:
    """Drop z (dim=2) or require it (dim=3)."""
    if dim == m.dim:
        return m
    if dim == 2:
        return RoofModel(tuple(Facet(f.vertices[:, :2], f.plane_angle) for f in m.facets))
    raise RoofkitError("model has no heights; cannot evaluate in 3-D")


def rmmd(
    gt: Sequence[RoofModel],
    gen: Sequence[RoofModel],
    dim: int = 2,
    penalty: float = DEFAULT_PENALTY,
    square_side: float = SQUARE_SIDE,
    threads: int = 1,
) -> float:
    """Normalize both sets, then the set distance from the ground truth ``gt`` to ``gen``."""
    a = [normalize_model(project(m, dim), square_side) for m in gt]
    b = [normalize_model(project(m, dim), square_side) for m in gen]
    return set_distance(a, b, penalty, threads)


def nearest_models(
    gt: Sequence[RoofModel],
    gen: Sequence[RoofModel],
    dim: int = 2,
    penalty: float = DEFAULT_PENALTY,
    square_side: float = SQUARE_SIDE,
    threads: int = 1,
) -> list[tuple[int, int, float]]:
    """For each reference model, the closest generated model and its symmetric model cost."""
    a = [normalize_model(project(m, dim), square_side) for m in gt]
    b = [normalize_model(project(m, dim), square_side) for m in gen]
    c = model_cost_matrix(a, b, penalty, threads)
    best = np.argmin(c, axis=1)
    return [(i, int(j), float(c[i, j])) for i, j in enumerate(best)]
