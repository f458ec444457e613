import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedcoal import params

finite_floats = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)
vectors = st.lists(finite_floats, min_size=1, max_size=16)


class TestCosine:
    def test_identical(self):
        assert params.cosine([1, 0], [1, 0]) == 1.0

    def test_orthogonal(self):
        assert params.cosine([1, 0], [0, 1]) == 0.0

    def test_hand_value(self):
        # dot = 2 + 2 + 4 = 8, norms 3 * 3 = 9
        assert params.cosine([1, 2, 2], [2, 1, 2]) == pytest.approx(8 / 9, abs=1e-15)

    def test_degenerate_returns_zero(self):
        assert params.cosine([0, 0], [1, 2]) == 0.0
        assert params.cosine([1e-13, 0], [1, 2]) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            params.cosine([1, 2], [1, 2, 3])

    @given(vectors)
    def test_symmetric(self, u):
        v = [x + 0.5 for x in u]
        assert params.cosine(u, v) == params.cosine(v, u)

    @given(vectors, st.floats(min_value=1e-3, max_value=1e3))
    def test_scale_invariant(self, u, c):
        v = np.arange(1.0, len(u) + 1.0)
        assert params.cosine(np.multiply(c, u), v) == pytest.approx(
            params.cosine(u, v), abs=1e-12
        )


class TestFlatHelpers:
    def test_as_flat_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            params.as_flat([1.0, np.nan])
        with pytest.raises(ValueError):
            params.as_flat([np.inf])

    def test_as_flat_ravels(self):
        assert params.as_flat([[1, 2], [3, 4]]).tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_is_degenerate(self):
        assert params.is_degenerate(np.zeros(3))
        assert params.is_degenerate([1e-13, 0.0])
        assert not params.is_degenerate([1e-6, 0.0])


class TestNorm:
    def test_zero(self):
        assert params.norm([0, 0, 0]) == 0.0

    def test_pythagorean(self):
        assert params.norm([3, 4]) == 5.0

    def test_unit(self):
        assert params.norm([1]) == 1.0


class TestDelta:
    def test_self_difference(self, rng):
        theta = rng.standard_normal(7)
        assert np.array_equal(params.delta(theta, theta), np.zeros(7))

    def test_componentwise(self):
        assert np.array_equal(params.delta([2, 3], [1, 1]), [1, 2])

    def test_identity_aggregation(self, rng):
        theta = rng.standard_normal(5)
        agg = params.weighted_average([theta], [1])
        assert np.array_equal(params.delta(agg, theta), np.zeros(5))

    def test_mismatch_is_hard_error(self):
        with pytest.raises(ValueError):
            params.delta([1, 2], [1, 2, 3])


class TestWeightedAverage:
    def test_single(self, rng):
        theta = rng.standard_normal(4)
        assert np.array_equal(params.weighted_average([theta], [5]), theta)

    def test_hand_value(self):
        # alphas (0.25, 0.75)
        out = params.weighted_average([[0, 0], [2, 4]], [1, 3])
        assert np.allclose(out, [1.5, 3.0], atol=1e-15)

    def test_identical_inputs(self, rng):
        v = rng.standard_normal(6)
        assert np.allclose(params.weighted_average([v, v], [1, 9]), v, atol=1e-15)

    def test_empty_is_hard_error(self):
        with pytest.raises(ValueError):
            params.weighted_average([], [])

    def test_count_scaling_invariance(self, rng):
        vs = list(rng.standard_normal((3, 5)))
        a = params.weighted_average(vs, [1, 3, 6])
        b = params.weighted_average(vs, [3, 9, 18])
        assert np.array_equal(a, b)

    @given(st.integers(min_value=2, max_value=5), st.integers(min_value=0, max_value=10_000))
    def test_convex_hull(self, n, seed):
        rng = np.random.default_rng(seed)
        vs = rng.standard_normal((n, 4))
        counts = rng.integers(1, 10, size=n)
        out = params.weighted_average(list(vs), counts)
        assert np.all(out >= vs.min(axis=0) - 1e-12)
        assert np.all(out <= vs.max(axis=0) + 1e-12)
