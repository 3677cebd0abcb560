import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from roofkit.model import Facet, RoofkitError, RoofModel
from roofkit.rmmd import (
    DEFAULT_PENALTY,
    facet_distance,
    greedy_match,
    model_distance,
    nearest_models,
    normalize_model,
    project,
    rmmd,
    set_distance,
    symmetric_model_cost,
    vertex_distance,
)

SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1)]
TRIANGLE = [(0, 0), (1, 0), (0, 1)]


def model(*facets):
    return RoofModel(tuple(Facet(np.asarray(f, dtype=float)) for f in facets))


def random_model(rng, n_facets=None):
    n = n_facets or int(rng.integers(1, 5))
    facets = []
    for _ in range(n):
        x, y = rng.uniform(0, 12, 2)
        w, h = rng.uniform(1, 4, 2)
        facets.append([(x, y), (x + w, y), (x + w, y + h), (x, y + h)])
    return model(*facets)


def brute_force_matched_mean(cost, penalty):
    """Minimum over all injective matchings of the smaller side."""
    n_a, n_b = cost.shape
    best = math.inf
    if n_a <= n_b:
        for cols in itertools.permutations(range(n_b), n_a):
            best = min(best, sum(cost[i, c] for i, c in enumerate(cols)))
        return best / n_a
    for rows in itertools.permutations(range(n_a), n_b):
        best = min(best, sum(cost[r, j] for j, r in enumerate(rows)) + penalty * (n_a - n_b))
    return best / n_a


class TestGreedy:
    def test_zero_diagonal(self):
        c = 1.0 - np.eye(4)
        m = greedy_match(c)
        assert [(i, j) for i, j, _ in m.pairs] == [(0, 0), (1, 1), (2, 2), (3, 3)]
        assert m.total == 0.0

    def test_non_optimal(self):
        c = np.array([[1.0, 2.0], [2.0, 100.0]])
        m = greedy_match(c)
        assert m.pairs == [(0, 0, 1.0), (1, 1, 100.0)] and m.total == 101.0
        rows, cols = linear_sum_assignment(c)
        assert c[rows, cols].sum() == 4.0

    def test_pigeonhole(self):
        m = greedy_match(np.arange(6.0).reshape(3, 2))
        assert len(m.pairs) == 2 and len(m.unmatched_a) == 1

    def test_tie_break_lexicographic(self):
        m = greedy_match(np.zeros((2, 2)))
        assert [(i, j) for i, j, _ in m.pairs] == [(0, 0), (1, 1)]

    def test_selection_order_nondecreasing(self):
        rng = np.random.default_rng(0)
        m = greedy_match(rng.uniform(0, 1, (6, 5)))
        costs = [c for _, _, c in m.pairs]
        assert costs == sorted(costs)
        assert len({i for i, _, _ in m.pairs}) == 5 and len({j for _, j, _ in m.pairs}) == 5

    def test_invalid_costs(self):
        with pytest.raises(RoofkitError):
            greedy_match([[1.0, -1.0]])
        with pytest.raises(RoofkitError):
            greedy_match([[np.inf]])
        with pytest.raises(RoofkitError):
            greedy_match([1.0, 2.0])

    def test_greedy_never_beats_optimal(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(1, 7))
            c = rng.uniform(0, 10, (n, n))
            rows, cols = linear_sum_assignment(c)
            assert greedy_match(c).total >= c[rows, cols].sum() - 1e-12

    def test_unique_zero_matching_found(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(1, 7))
            perm = rng.permutation(n)
            c = rng.uniform(1, 10, (n, n))
            c[np.arange(n), perm] = 0.0
            assert greedy_match(c).total == 0.0


class TestVertexDistance:
    def test_values(self):
        assert vertex_distance((0, 0), (3, 4)) == 5.0
        assert vertex_distance((2, 7), (2, 7)) == 0.0
        assert vertex_distance((0, 0, 0), (1, 1, 1)) == pytest.approx(math.sqrt(3))

    def test_dimension_mismatch(self):
        with pytest.raises(RoofkitError):
            vertex_distance((0, 0), (0, 0, 0))


class TestFacetDistance:
    def test_identical(self):
        assert facet_distance(SQUARE, SQUARE) == 0.0

    def test_offset_square(self):
        moved = [(x + 1, y) for x, y in SQUARE]
        assert facet_distance(SQUARE, moved) == 1.0

    def test_square_vs_triangle(self):
        # three vertices match at zero; the fourth takes one penalty
        assert facet_distance(SQUARE, TRIANGLE) == pytest.approx(DEFAULT_PENALTY / 4)
        assert facet_distance(TRIANGLE, SQUARE) == 0.0

    def test_penalty_value(self):
        assert DEFAULT_PENALTY == pytest.approx(16 * math.sqrt(2))

    def test_matches_brute_force_when_unique(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            pts = rng.uniform(0, 10, (int(rng.integers(3, 7)), 2))
            shuffled = pts[rng.permutation(len(pts))]
            assert facet_distance(pts, shuffled) == 0.0

    def test_mixed_dimensions(self):
        with pytest.raises(RoofkitError):
            facet_distance(SQUARE, [(0, 0, 0), (1, 0, 0), (0, 1, 0)])


class TestModelDistance:
    def test_identical(self):
        m = model(SQUARE, TRIANGLE)
        assert model_distance(m, m) == 0.0

    def test_asymmetry(self):
        far = [(10, 10), (11, 10), (11, 11)]
        m1, m2 = model(SQUARE), model(SQUARE, far)
        assert model_distance(m1, m2) == 0.0
        assert model_distance(m2, m1) == pytest.approx(DEFAULT_PENALTY / 2)
        assert symmetric_model_cost(m1, m2) == pytest.approx(DEFAULT_PENALTY / 4)

    def test_single_vertex_perturbation(self):
        delta = 0.01
        moved = [(0, 0), (1, 0), (1 + delta, 1), (0, 1)]
        m1 = model(SQUARE, [(3, 3), (5, 3), (4, 5)])
        m2 = model(moved, [(3, 3), (5, 3), (4, 5)])
        assert model_distance(m1, m2) == pytest.approx(delta / (2 * 4), rel=1e-12)


class TestNormalize:
    def test_already_fitted(self):
        m = model([(0, 0), (16, 0), (16, 16), (0, 16)])
        assert normalize_model(m) == m

    def test_eight_by_four(self):
        m = normalize_model(model([(0, 0), (8, 0), (8, 4), (0, 4)]))
        v = m.facets[0].vertices
        assert v.tolist() == [[0, 4], [16, 4], [16, 12], [0, 12]]

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            m = normalize_model(random_model(rng))
            assert np.allclose(
                np.concatenate([f.vertices for f in normalize_model(m).facets]),
                np.concatenate([f.vertices for f in m.facets]),
            )

    def test_z_scaled(self):
        m = RoofModel((Facet(np.array([(0, 0, 3), (8, 0, 3), (8, 4, 5.0)])),))
        assert normalize_model(m).facets[0].vertices[:, 2].tolist() == [6, 6, 10]

    def test_zero_extent(self):
        with pytest.raises(RoofkitError):
            normalize_model(model([(1, 1), (1, 1), (1, 1)]))


class TestSetDistance:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.models = [normalize_model(random_model(rng)) for _ in range(6)]

    def test_identity(self):
        assert set_distance(self.models, self.models) == 0.0

    def test_subset(self):
        assert set_distance(self.models[:3], self.models) == 0.0

    def test_single_pair(self):
        a, b = self.models[:2]
        assert set_distance([a], [b]) == symmetric_model_cost(a, b)

    def test_three_vs_two_brute_force(self):
        s1, s2 = self.models[:3], self.models[3:5]
        cost = np.array([[symmetric_model_cost(a, b) for b in s2] for a in s1])
        expected = brute_force_matched_mean(cost, DEFAULT_PENALTY)
        got = set_distance(s1, s2)
        assert got >= expected - 1e-12
        # one penalty term appears
        assert got >= DEFAULT_PENALTY / 3

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        base = set_distance(self.models[:3], self.models[3:])
        for _ in range(5):
            s1 = [self.models[k] for k in rng.permutation(3)]
            s2 = [
                RoofModel(tuple(m.facets[k] for k in rng.permutation(len(m)))) for m in self.models[3:]
            ]
            s2 = [s2[k] for k in rng.permutation(3)]
            assert set_distance(s1, s2) == pytest.approx(base, rel=1e-12)

    def test_empty(self):
        with pytest.raises(RoofkitError):
            set_distance([], self.models)

    def test_threads_agree(self):
        assert set_distance(self.models[:3], self.models[3:], threads=3) == set_distance(
            self.models[:3], self.models[3:]
        )


def _scaled(m, k):
    return RoofModel(tuple(Facet(f.vertices * k, f.plane_angle) for f in m.facets))


class TestRmmd:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.gt = [random_model(rng) for _ in range(4)]
        self.gen = [random_model(rng) for _ in range(5)]

    def test_scale_invariance(self):
        assert rmmd([_scaled(m, 2.0) for m in self.gt], self.gen) == pytest.approx(rmmd(self.gt, self.gen))

    def test_monotone_penalty(self):
        ds = [rmmd(self.gt, self.gen, penalty=p) for p in (1.0, 5.0, 22.0, 100.0)]
        assert ds == sorted(ds)

    def test_identity(self):
        assert rmmd(self.gt, self.gt) == 0.0

    def test_project(self):
        m = RoofModel((Facet(np.array([(0, 0, 3), (8, 0, 3), (8, 4, 5.0)])),))
        assert project(m, 2).dim == 2
        with pytest.raises(RoofkitError):
            project(project(m, 2), 3)

    def test_nearest(self):
        rows = nearest_models(self.gt, self.gt + self.gen)
        assert [(i, j, c) for i, j, c in rows] == [(k, k, 0.0) for k in range(4)]
