import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gamebo.errors import AnchorError, ValidationError
from gamebo.pareto import (AnchorPoints, ObjectiveSet, benefit_ratios, dominance_tally, dominates, nadir,
                           nondominated_mask, pareto_filter, pseudo_nadir, rank_transform, utopia)

import oracles


def point_sets(min_m=2, max_m=5):
    return st.integers(min_m, max_m).flatmap(
        lambda m: arrays(np.float64, st.tuples(st.integers(1, 40), st.just(m)),
                         elements=st.integers(0, 6).map(float)))


class TestDominates:
    def test_examples(self):
        assert dominates((1, 2), (2, 3))
        assert not dominates((1, 2), (1, 2))
        assert not dominates((1, 3), (2, 2))

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            dominates((1, 2), (1, 2, 3))


class TestParetoFilter:
    def test_example(self):
        out = pareto_filter([(1, 2), (2, 1), (2, 2)])
        np.testing.assert_array_equal(out.values, [[1, 2], [2, 1]])

    def test_identical_points_all_retained(self):
        v = np.ones((5, 3))
        assert len(pareto_filter(v)) == 5

    def test_matches_pairwise_oracle_four_objectives(self):
        v = np.random.default_rng(0).random((200, 4))
        np.testing.assert_array_equal(nondominated_mask(v), oracles.nondominated(v))

    def test_keeps_designs_aligned(self):
        s = ObjectiveSet([[3, 3], [1, 2], [2, 1]], designs=[[0.0], [0.1], [0.2]])
        out = pareto_filter(s)
        np.testing.assert_array_equal(out.designs.ravel(), [0.1, 0.2])

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            pareto_filter(np.zeros((0, 2)))

    @settings(max_examples=200, deadline=None)
    @given(point_sets(1, 5))
    def test_matches_oracle_with_ties(self, v):
        np.testing.assert_array_equal(nondominated_mask(v), oracles.nondominated(v))

    @settings(max_examples=50, deadline=None)
    @given(point_sets())
    def test_idempotent_and_antichain(self, v):
        once = pareto_filter(v).values
        np.testing.assert_array_equal(pareto_filter(once).values, once)
        for a in once:
            for b in once:
                assert not dominates(a, b)


class TestReferencePoints:
    def test_utopia_examples(self):
        np.testing.assert_array_equal(utopia([(1, 2), (2, 1)]), [1, 1])
        np.testing.assert_array_equal(utopia([(4, 5, 6)]), [4, 5, 6])
        v = np.random.default_rng(1).random((100, 3))
        np.testing.assert_array_equal(utopia(v), [min(r[i] for r in v) for i in range(3)])

    def test_nadir_examples(self):
        np.testing.assert_array_equal(nadir([(1, 2), (2, 1), (5, 5)]), [2, 2])
        np.testing.assert_array_equal(nadir([(4, 5)]), [4, 5])
        v = np.random.default_rng(2).random((60, 3))
        np.testing.assert_array_equal(nadir(v), v[oracles.nondominated(v)].max(axis=0))

    def test_nadir_attained_by_a_pareto_point(self):
        v = np.random.default_rng(3).random((50, 3))
        front = pareto_filter(v).values
        n = nadir(v)
        for i in range(3):
            assert np.any(front[:, i] == n[i])

    def test_pseudo_nadir_corners(self):
        np.testing.assert_array_equal(pseudo_nadir([(1, 5), (5, 1)]), [5, 5])

    def test_pseudo_nadir_equals_nadir_for_two_objectives(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            v = rng.integers(0, 5, size=(int(rng.integers(1, 30)), 2)).astype(float)
            np.testing.assert_array_equal(pseudo_nadir(v), nadir(v))

    def test_pseudo_nadir_three_objective_example(self):
        v = [(0, 1, 1), (1, 0, 1), (1, 1, 0), (0.9, 0.9, 0.9)]
        np.testing.assert_array_equal(pseudo_nadir(v), [1, 1, 1])
        np.testing.assert_array_equal(nadir(v), [1, 1, 1])

    def test_pseudo_nadir_can_differ_for_three_objectives(self):
        # randomized counterexample search, oracle = filter-then-max and pay-off table
        rng = np.random.default_rng(5)
        found = None
        for _ in range(1000):
            v = rng.random((6, 3))
            front = v[oracles.nondominated(v)]
            table = v[[int(np.argmin(v[:, j])) for j in range(3)]]
            if not np.allclose(front.max(axis=0), table.max(axis=0)):
                found = v
                break
        assert found is not None
        assert not np.allclose(pseudo_nadir(found), nadir(found))
        assert np.all(pseudo_nadir(found) <= nadir(found))


class TestAnchorsAndRatios:
    def test_ratio_examples(self):
        a = AnchorPoints([0, 0], [1, 1])
        np.testing.assert_array_equal(benefit_ratios([1, 1], a), [0, 0])
        np.testing.assert_array_equal(benefit_ratios([0, 0], a), [1, 1])
        np.testing.assert_allclose(benefit_ratios([0.25, 0.75], a), [0.75, 0.25])

    def test_degenerate_anchor_names_coordinates(self):
        with pytest.raises(AnchorError) as info:
            AnchorPoints([0, 1, 0], [1, 1, -1])
        assert list(info.value.coordinates) == [1, 2]

    def test_affine_invariance(self):
        rng = np.random.default_rng(6)
        y = rng.random((20, 3))
        u, d = np.zeros(3), np.ones(3) * 1.5
        a, b = rng.uniform(0.1, 5, 3), rng.uniform(-3, 3, 3)
        r1 = benefit_ratios(y, AnchorPoints(u, d))
        r2 = benefit_ratios(a * y + b, AnchorPoints(a * u + b, a * d + b))
        np.testing.assert_allclose(r1, r2, atol=1e-12)

    def test_preference_replaces_coordinates(self):
        v = [(0, 4), (1, 2), (3, 0)]
        a = AnchorPoints.from_set(v, "preference", {1: 3.0})
        np.testing.assert_array_equal(a.disagreement, [3, 3])
        assert a.kind == "preference"

    def test_from_set_kinds(self):
        v = [(0, 4), (1, 2), (3, 0), (5, 5)]
        np.testing.assert_array_equal(AnchorPoints.from_set(v, "nadir").disagreement, [3, 4])
        np.testing.assert_array_equal(AnchorPoints.from_set(v, "pseudo-nadir").disagreement, [3, 4])
        with pytest.raises(ValidationError):
            AnchorPoints.from_set(v, "nash")


class TestRankTransform:
    def test_examples(self):
        out = rank_transform([[3.0], [1.0], [2.0]])
        np.testing.assert_array_equal(out.values.ravel(), [1.0, 0.0, 0.5])
        np.testing.assert_array_equal(rank_transform([[2.0], [2.0], [2.0]]).values.ravel(), [0.5] * 3)

    def test_preserves_dominance_on_tie_free_sets(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            v = rng.random((25, 3))
            np.testing.assert_array_equal(nondominated_mask(v), nondominated_mask(rank_transform(v).values))


def test_tally_partitions_points():
    v = np.random.default_rng(8).random((40, 3))
    dom, nd = dominance_tally(v)
    assert dom + nd == 40 and nd == oracles.nondominated(v).sum()


def test_objective_set_rejects_non_finite():
    with pytest.raises(ValidationError):
        ObjectiveSet([[1.0, np.nan]])
