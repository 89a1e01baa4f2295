import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crtb.errors import DegenerateColumnWarning, InvalidInputError
from crtb.numkernel import normal_quantile
from crtb.preprocess import (
    fit_scaler,
    inverse_transform,
    prefilter,
    prefilter_threshold,
    transform,
)

blocks = arrays(
    float,
    st.tuples(st.integers(3, 25), st.integers(1, 6)),
    elements=st.floats(-1e3, 1e3, allow_nan=False),
)


class TestFitScaler:
    def test_median_mad(self):
        s = fit_scaler(np.arange(1.0, 6.0), "median", "mad")
        assert s.centers[0] == 3
        assert s.scales[0] == pytest.approx(1.4826)

    @pytest.mark.parametrize("loc, sc", [("median", "mad"), ("mean", "std"), ("median", "tau2")])
    def test_constant_column(self, loc, sc):
        with pytest.warns(DegenerateColumnWarning):
            s = fit_scaler(np.full(4, 5.0), loc, sc)
        assert s.centers[0] == 5 and s.scales[0] == 1
        assert s.degenerate == (0,)

    def test_mean_std(self):
        s = fit_scaler([1.0, 2.0, 3.0], "mean", "std")
        assert s.centers[0] == 2 and s.scales[0] == 1

    def test_zero_mad_falls_back_to_std(self):
        col = np.array([0, 0, 0, 10.0])
        s = fit_scaler(col, "median", "mad")
        assert s.scales[0] == pytest.approx(np.std(col, ddof=1))

    def test_too_few_rows(self):
        with pytest.raises(InvalidInputError):
            fit_scaler([[1.0, 2.0]])

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            fit_scaler(np.ones((3, 1)), "mode", "mad")

    def test_mask_uses_clean_cells_only(self, rng):
        X = rng.standard_normal((40, 3))
        mask = np.ones_like(X, dtype=np.uint8)
        X[:10, 0] += 100.0
        mask[:10, 0] = 0
        s = fit_scaler(X, mask=mask)
        ref = fit_scaler(X[10:, :1])
        assert s.centers[0] == ref.centers[0] and s.scales[0] == ref.scales[0]

    def test_all_ones_mask_is_identity(self, rng):
        X = rng.standard_normal((30, 4))
        a, b = fit_scaler(X), fit_scaler(X, mask=np.ones(X.shape))
        np.testing.assert_array_equal(a.centers, b.centers)
        np.testing.assert_array_equal(a.scales, b.scales)

    @given(blocks)
    def test_scales_positive(self, X):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            s = fit_scaler(X)
        assert np.all(s.scales > 0)


class TestTransform:
    def test_identities(self, rng):
        X = rng.standard_normal((10, 3))
        s = fit_scaler(X)
        np.testing.assert_allclose(transform(s.centers[None, :], s), 0)
        np.testing.assert_allclose(transform((s.centers + s.scales)[None, :], s), 1)
        np.testing.assert_allclose(inverse_transform(np.zeros((1, 3)), s), s.centers[None, :])
        np.testing.assert_allclose(inverse_transform(np.ones((1, 3)), s), (s.centers + s.scales)[None, :])

    def test_width_mismatch(self, rng):
        s = fit_scaler(rng.standard_normal((10, 3)))
        with pytest.raises(InvalidInputError):
            transform(np.ones((2, 4)), s)
        with pytest.raises(InvalidInputError):
            inverse_transform(np.ones((2, 2)), s)

    @given(blocks, st.sampled_from(["mad", "std", "tau2"]))
    def test_round_trip(self, X, scale):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            s = fit_scaler(X, "median", scale)
        np.testing.assert_allclose(inverse_transform(transform(X, s), s), X, rtol=1e-12, atol=1e-9)


class TestPrefilter:
    def test_threshold(self):
        assert prefilter_threshold(0.99) == pytest.approx(normal_quantile(0.995))

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -1, 2])
    def test_bad_alpha(self, alpha):
        with pytest.raises(InvalidInputError):
            prefilter(np.ones((3, 1)), alpha)

    def test_hand_example(self, backend):
        # median |x| is 1 and 5 / 1.4826 = 3.37 exceeds 2.5758
        col = np.array([-1.0, 1.0, 1.0, -1.0, 5.0, 0.5, -1.5])
        assert np.median(np.abs(col)) == 1
        mask = prefilter(col[:, None], 0.99)
        np.testing.assert_array_equal(mask[:, 0], [1, 1, 1, 1, 0, 1, 1])

    def test_zero_never_flagged(self, rng):
        Z = rng.standard_normal((30, 2)) * 10
        Z[0] = 0
        for alpha in (0.5, 0.9, 0.99):
            assert prefilter(Z, alpha)[0].all()

    def test_zero_mad_column_warns(self, backend):
        Z = np.zeros((6, 2))
        Z[0, 0] = 50.0
        Z[:, 1] = np.arange(6.0)
        with pytest.warns(DegenerateColumnWarning):
            mask = prefilter(Z, 0.99)
        assert mask[:, 0].all()

    def test_nominal_flag_rate(self):
        rates = []
        for seed in range(50):
            Z = np.random.default_rng(seed).standard_normal((200, 10))
            rates.append(1 - prefilter(Z, 0.99).mean())
        assert np.mean(rates) == pytest.approx(0.01, abs=0.01)

    @given(blocks, st.randoms())
    def test_row_permutation_equivariant(self, X, r):
        idx = list(range(X.shape[0]))
        r.shuffle(idx)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            np.testing.assert_array_equal(prefilter(X[idx]), prefilter(X)[idx])

    @given(blocks)
    def test_column_separable(self, X):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            full = prefilter(X)
            for j in range(X.shape[1]):
                np.testing.assert_array_equal(prefilter(X[:, j]), full[:, [j]])

    @given(blocks, st.floats(0.5, 0.98), st.floats(0.001, 0.0199))
    def test_monotone_in_alpha(self, X, a, gap):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert (1 - prefilter(X, a + gap)).sum() <= (1 - prefilter(X, a)).sum()

    @given(
        arrays(float, st.tuples(st.integers(3, 25), st.integers(1, 6)),
               elements=st.floats(-1e3, 1e3, allow_subnormal=False)),
        st.sampled_from([0.125, 0.5, 2.0, 4.0, 64.0]),
    )
    def test_scale_invariant(self, X, c):
        # power-of-two factors rescale exactly (subnormals excluded, where they would
        # underflow), so the ratio test is unchanged bit for bit
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            np.testing.assert_array_equal(prefilter(X), prefilter(X * c))


def test_negligible_scale_falls_back_to_std():
    X = np.array([[6.0], [2.2250738585072014e-308], [0.0]])
    s = fit_scaler(X)
    assert s.scales[0] == pytest.approx(np.std(X[:, 0], ddof=1))
    assert np.all(np.isfinite(transform(X, s)))
