import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crtb import kernels
from crtb.errors import DegenerateError, InvalidInputError
from crtb.estimator import (
    CrtbConfig,
    CrtbFit,
    cell_weight_report,
    converged,
    fit_crtb,
    fit_tb,
    impute_cells,
    intercept,
    predict,
    predict_std_scale,
    rescale_coefficients,
)
from crtb.preprocess import ScalingModel, fit_scaler, transform
from crtb.robustweights import PsiSpec
from crtb.simlab import ContaminationSpec, DgpParams, contaminate_cellwise, generate_dgp, mse_B
from crtb.twoblock import fit_twoblock


@pytest.fixture
def dgp_data():
    X, Y, B, _, _ = generate_dgp(DgpParams(seed=11))
    return X, Y, B


def contaminated(seed=5, pct=0.2):
    rng = np.random.default_rng(seed)
    X, Y, B, _, _ = generate_dgp(DgpParams(), rng)
    Xc, Yc, tx, ty = contaminate_cellwise(X, Y, ContaminationSpec(cell_pct=pct), 20, rng)
    return Xc, Yc, B, tx, ty


def unit_scaler(p):
    return ScalingModel(np.zeros(p), np.ones(p))


class TestFitCrtb:
    def test_clean_comparable_to_tb(self, dgp_data):
        X, Y, _ = dgp_data
        cr, tb = fit_crtb(X, Y), fit_tb(X, Y, 3, 3)
        assert cr.converged
        assert np.linalg.norm(cr.B - tb.B) / np.linalg.norm(tb.B) < 0.5

    def test_baseline_degeneracy(self, dgp_data):
        X, Y, _ = dgp_data
        cfg = CrtbConfig(psi=PsiSpec("none"), initializer="external_mask")
        fit = fit_crtb(X, Y, cfg, np.ones(X.shape), np.ones(Y.shape))
        sx, sy = fit_scaler(X), fit_scaler(Y)
        ref = fit_twoblock(transform(X, sx), transform(Y, sy), 3, 3)
        assert fit.converged and fit.n_iter <= 2
        np.testing.assert_array_equal(fit.model.Bs, ref.Bs)
        np.testing.assert_array_equal(fit.model.W, ref.W)

    def test_cellwise_beats_tb(self):
        Xc, Yc, B, _, _ = contaminated()
        assert mse_B(fit_crtb(Xc, Yc).B, B) < mse_B(fit_tb(Xc, Yc, 3, 3).B, B)

    def test_invariants(self):
        Xc, Yc, _, _, _ = contaminated()
        fit = fit_crtb(Xc, Yc)
        assert fit.n_iter <= fit.config.max_iter and len(fit.trace) == fit.n_iter
        for w in (fit.wx, fit.wy):
            assert np.all((w >= 0) & (w <= 1))
        Xs, Ys = transform(Xc, fit.scaler_x), transform(Yc, fit.scaler_y)
        clean_x, clean_y = fit.floor_x == 1, fit.floor_y == 1
        np.testing.assert_array_equal(fit.Xs_imputed[clean_x], Xs[clean_x])
        np.testing.assert_array_equal(fit.Ys_imputed[clean_y], Ys[clean_y])
        assert set(np.unique(fit.floor_x)) <= {0, 1}
        assert np.all(np.isfinite(fit.B))

    def test_floor_is_prefilter_of_final_standardisation(self):
        from crtb.preprocess import prefilter

        Xc, Yc, _, _, _ = contaminated()
        fit = fit_crtb(Xc, Yc)
        np.testing.assert_array_equal(fit.floor_x, prefilter(transform(Xc, fit.scaler_x), 0.99))

    def test_deterministic(self):
        Xc, Yc, _, _, _ = contaminated()
        a, b = fit_crtb(Xc, Yc), fit_crtb(Xc.copy(), Yc.copy())
        np.testing.assert_array_equal(a.B, b.B)
        np.testing.assert_array_equal(a.wx, b.wx)
        assert a.trace == b.trace

    def test_backends_agree(self):
        Xc, Yc, _, _, _ = contaminated(seed=8)
        fits = {}
        for name in kernels.available():
            prev = kernels.use(name)
            try:
                fits[name] = fit_crtb(Xc, Yc)
            finally:
                kernels.backend = prev
        ref = fits["python"]
        for fit in fits.values():
            np.testing.assert_allclose(fit.B, ref.B, rtol=1e-9, atol=1e-12)
            assert fit.n_iter == ref.n_iter

    def test_non_convergence_is_reported(self):
        Xc, Yc, _, _, _ = contaminated()
        fit = fit_crtb(Xc, Yc, CrtbConfig(max_iter=1))
        assert fit.n_iter == 1 and not fit.converged

    def test_sparse_selects(self):
        Xc, Yc, _, _, _ = contaminated()
        fit = fit_crtb(Xc, Yc, CrtbConfig(eta_x=0.5))
        assert 0 < fit.model.selected_x.sum() < Xc.shape[1]

    def test_external_mask_requires_masks(self, dgp_data):
        X, Y, _ = dgp_data
        with pytest.raises(InvalidInputError):
            fit_crtb(X, Y, CrtbConfig(initializer="external_mask"))

    def test_too_few_rows(self):
        with pytest.raises(InvalidInputError):
            fit_crtb(np.ones((4, 3)), np.ones((4, 2)))

    def test_row_mismatch(self, dgp_data):
        X, Y, _ = dgp_data
        with pytest.raises(InvalidInputError):
            fit_crtb(X, Y[:-1])

    @pytest.mark.parametrize(
        "kwargs",
        [{"max_iter": 0}, {"tol": 0}, {"alpha_cell": 1.0}, {"initializer": "ddc"}, {"location": "mode"}],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            CrtbConfig(**kwargs)


class TestImputeCells:
    def test_all_clean(self, backend, rng):
        Z = rng.standard_normal((5, 3))
        W = np.linalg.qr(rng.standard_normal((3, 2)))[0]
        np.testing.assert_array_equal(impute_cells(Z, np.ones_like(Z), W, W), Z)

    def test_hand_example(self, backend):
        p = np.full((2, 1), 1 / np.sqrt(2))
        out = impute_cells(np.array([[3.0, 3.0]]), np.array([[1, 0]]), p, p)
        assert out[0, 0] == 3.0
        assert out[0, 1] == pytest.approx(1.5)

    def test_fully_flagged_row(self, backend, rng):
        Z = rng.standard_normal((4, 3))
        mask = np.ones_like(Z, dtype=np.uint8)
        mask[2] = 0
        W = np.linalg.qr(rng.standard_normal((3, 2)))[0]
        np.testing.assert_array_equal(impute_cells(Z, mask, W, W)[2], 0)

    def test_shape_check(self, rng):
        with pytest.raises(InvalidInputError):
            impute_cells(np.ones((3, 3)), np.ones((3, 3)), np.ones((3, 2)), np.ones((3, 1)))

    @given(st.integers(0, 2**31), st.integers(2, 8), st.integers(1, 3), st.floats(0, 0.9))
    def test_clean_cells_preserved(self, seed, p, k, rate):
        r = np.random.default_rng(seed)
        k = min(k, p)
        Z = r.standard_normal((12, p))
        mask = (r.random(Z.shape) > rate).astype(np.uint8)
        W, P = r.standard_normal((p, k)), r.standard_normal((p, k))
        out = impute_cells(Z, mask, W, P)
        np.testing.assert_array_equal(out[mask == 1], Z[mask == 1])


class TestConverged:
    def test_examples(self):
        A = np.ones((2, 2))
        assert converged(A, A, 1e-4)
        prev = np.array([[2.0]])
        assert converged(prev, np.array([[np.sqrt(4.0003)]]), 1e-4)
        assert not converged(prev, np.array([[np.sqrt(5.0)]]), 1e-4)

    def test_zero_previous(self):
        with pytest.raises(DegenerateError):
            converged(np.zeros((2, 2)), np.ones((2, 2)), 1e-4)


class TestRescale:
    def test_identity(self, rng):
        Bs = rng.standard_normal((3, 2))
        np.testing.assert_array_equal(rescale_coefficients(Bs, unit_scaler(3), unit_scaler(2)), Bs)

    def test_hand_example(self):
        sx = ScalingModel(np.zeros(1), np.array([4.0]))
        sy = ScalingModel(np.zeros(1), np.array([2.0]))
        assert rescale_coefficients(np.ones((1, 1)), sx, sy)[0, 0] == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            rescale_coefficients(np.ones((2, 2)), unit_scaler(3), unit_scaler(2))

    def test_round_trip_with_standardised_prediction(self, dgp_data):
        X, Y, _ = dgp_data
        fit = fit_tb(X, Y, 3, 3, location="median", scale="mad")
        # original-scale prediction uses the residual-median intercept; compare slopes
        diff = predict(fit, X) - predict_std_scale(fit, X)
        np.testing.assert_allclose(diff - diff[0], 0, atol=1e-10)
        fit_c = fit_tb(X, Y, 3, 3)
        np.testing.assert_allclose(predict(fit_c, X), predict_std_scale(fit_c, X), atol=1e-10)


class TestIntercept:
    def test_exact(self, rng):
        X, B = rng.standard_normal((10, 3)), rng.standard_normal((3, 2))
        np.testing.assert_allclose(intercept(X @ B, X, B), 0, atol=1e-14)
        np.testing.assert_allclose(intercept(X @ B + 1, X, B, "mean"), 1)

    def test_median_vs_mean(self):
        Y = np.array([[0.0], [0.0], [0.0], [10.0]])
        X, B = np.zeros((4, 1)), np.zeros((1, 1))
        assert intercept(Y, X, B, "median")[0] == 0
        assert intercept(Y, X, B, "mean")[0] == 2.5


class TestPredict:
    def test_zero_and_linearity(self, dgp_data, rng):
        X, Y, _ = dgp_data
        fit = fit_crtb(X, Y)
        np.testing.assert_array_equal(predict(fit, np.zeros((2, 30))), np.tile(fit.intercept, (2, 1)))
        A, C = rng.standard_normal((4, 30)), rng.standard_normal((4, 30))
        lin = lambda Z: predict(fit, Z) - fit.intercept  # noqa: E731
        np.testing.assert_allclose(lin(A + 2 * C), lin(A) + 2 * lin(C), atol=1e-12)

    def test_noiseless_reconstruction(self, rng):
        t = rng.standard_normal((40, 1))
        X = t @ rng.standard_normal((1, 4)) + 3.0
        Y = t @ rng.standard_normal((1, 2)) - 1.0
        fit = fit_tb(X, Y, 1, 1)
        np.testing.assert_allclose(fit.predict(X), Y, atol=1e-8)

    def test_width_mismatch(self, dgp_data):
        X, Y, _ = dgp_data
        with pytest.raises(InvalidInputError):
            predict(fit_tb(X, Y, 2, 2), np.zeros((2, 5)))


class TestCellWeightReport:
    def fake(self, wx, floor_x):
        wx, floor_x = np.asarray(wx, float), np.asarray(floor_x, np.uint8)
        return CrtbFit(
            model=None, scaler_x=None, scaler_y=None, B=None, intercept=None,
            floor_x=floor_x, floor_y=floor_x[:, :1], wx=wx, wy=wx,
        )

    def test_examples(self):
        fit = self.fake([1.0, 1.0, 0.4], [[1, 1], [1, 0], [1, 1]])
        cx, cy, fx, fy = cell_weight_report(fit)
        np.testing.assert_array_equal(cx, [[1, 1], [1, 0], [0.4, 0.4]])
        np.testing.assert_array_equal(fx, [[0, 0], [0, 1], [1, 1]])
        assert cy.shape == (3, 1)
