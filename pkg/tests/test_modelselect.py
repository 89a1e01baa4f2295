import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crtb.errors import InvalidInputError
from crtb.modelselect import CvGrid, fold_assignment, inverse_variance_weights, kfold_cv, make_fitter, wmse
from crtb.simlab import DgpParams, generate_dgp


class TestWmse:
    def test_perfect(self, rng):
        Y = rng.standard_normal((10, 3))
        assert wmse(Y, Y, [1, 2, 3]) == 0
        assert wmse(Y, Y, [1, 2, 3], "normalized") == 0

    def test_turbine_weights(self):
        w = inverse_variance_weights([5.67, 134.76])
        np.testing.assert_allclose(np.round(w, 3), [0.960, 0.040])

    def test_single_column_modes_coincide(self, rng):
        Y, Yh = rng.standard_normal((10, 1)), rng.standard_normal((10, 1))
        a, b = wmse(Y, Yh, [2.5]), wmse(Y, Yh, [2.5], "normalized")
        assert a == pytest.approx(np.mean((Y - Yh) ** 2) / 2.5)
        assert b == pytest.approx(np.mean((Y - Yh) ** 2))
        assert wmse(Y, Yh, [1.0]) == pytest.approx(wmse(Y, Yh, [1.0], "normalized"))

    @given(st.integers(0, 2**31), st.integers(1, 6))
    def test_mode_identity(self, seed, q):
        # mean-ratio = normalized * mean(1 / Var); equal unit variances make them equal
        r = np.random.default_rng(seed)
        Y, Yh = r.standard_normal((8, q)), r.standard_normal((8, q))
        v = r.uniform(0.1, 10, q)
        assert wmse(Y, Yh, v) == pytest.approx(wmse(Y, Yh, v, "normalized") * np.mean(1 / v), rel=1e-12)

    @pytest.mark.parametrize("v", [[1.0, 0.0], [1.0, -2.0], [np.inf, 1.0]])
    def test_bad_variances(self, rng, v):
        Y = rng.standard_normal((5, 2))
        with pytest.raises(InvalidInputError):
            wmse(Y, Y, v)

    def test_shape_mismatch(self, rng):
        with pytest.raises(InvalidInputError):
            wmse(np.ones((3, 2)), np.ones((3, 1)), [1, 1])
        with pytest.raises(InvalidInputError):
            wmse(np.ones((3, 2)), np.ones((3, 2)), [1])

    def test_unknown_mode(self):
        with pytest.raises(InvalidInputError):
            wmse(np.ones((3, 1)), np.ones((3, 1)), [1], "robust")


class TestFolds:
    @given(st.integers(2, 10).flatmap(lambda f: st.tuples(st.just(f), st.integers(2 * f, 200))), st.integers(0, 99))
    def test_partition(self, fn, seed):
        folds, n = fn
        a = fold_assignment(n, folds, seed)
        sizes = np.bincount(a, minlength=folds)
        assert a.shape == (n,) and set(np.unique(a)) == set(range(folds))
        assert sizes.max() - sizes.min() <= 1

    def test_deterministic(self):
        np.testing.assert_array_equal(fold_assignment(50, 3, 4), fold_assignment(50, 3, 4))

    def test_too_few_rows(self):
        with pytest.raises(InvalidInputError):
            fold_assignment(5, 3, 0)


class TestGrid:
    def test_defaults(self):
        g = CvGrid()
        assert g.eta_x == (0.3, 0.5, 0.7) and g.folds == 3

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            CvGrid(eta_x=())
        with pytest.raises(InvalidInputError):
            CvGrid(folds=1)

    def test_dense_cells_ignore_eta(self):
        assert CvGrid().cells(sparse=False) == [(3, 3, 0.0, 0.0)]


class TestKfoldCv:
    @pytest.fixture
    def data(self):
        X, Y, *_ = generate_dgp(DgpParams(n=60, seed=2))
        return X, Y

    def test_single_cell(self, data):
        res = kfold_cv(*data, CvGrid(eta_x=(0.5,)), "tb_sparse")
        assert len(res.table) == 1 and res.best["eta_x"] == 0.5

    def test_best_is_minimum(self, data):
        res = kfold_cv(*data, CvGrid(), "crtb_sparse")
        assert res.best["mean"] == min(row["mean"] for row in res.table)

    def test_deterministic(self, data):
        a, b = kfold_cv(*data, CvGrid(), "tb_sparse"), kfold_cv(*data, CvGrid(), "tb_sparse")
        assert a.to_csv() == b.to_csv()

    def test_sparsity_tie_break(self, rng):
        # one informative variable: eta 0.5 zeroes only noise weights and ties eta 0
        n = 30
        t = rng.standard_normal(n)
        X = np.column_stack([t, np.zeros((n, 4))])
        X[:, 1:] = 1e-9 * rng.standard_normal((n, 4))
        Y = np.column_stack([2 * t, -t])
        res = kfold_cv(X, Y, CvGrid(eta_x=(0.0, 0.5), k_x=(1,), k_y=(1,)), "tb_sparse")
        assert res.best["eta_x"] == 0.5

    def test_failures_score_inf(self, data, monkeypatch):
        import crtb.modelselect as ms
        from crtb.errors import RankDeficiencyError

        real = ms.make_fitter("tb_sparse", None)

        def flaky(fitter, cfg):
            def fit(X, Y, kx, ky, ex, ey):
                if ex == 0.3:
                    raise RankDeficiencyError("singular fold")
                return real(X, Y, kx, ky, ex, ey)

            return fit

        monkeypatch.setattr(ms, "make_fitter", flaky)
        res = kfold_cv(*data, CvGrid(), "tb_sparse")
        bad = [row for row in res.table if row["eta_x"] == 0.3][0]
        assert bad["mean"] == np.inf and bad["n_failed"] == 3
        assert len(res.errors) == 3 and np.isfinite(res.best["mean"])

    def test_csv_export(self, data, tmp_path):
        res = kfold_cv(*data, CvGrid(eta_x=(0.3, 0.7)), "tb_sparse")
        text = res.to_csv(tmp_path / "cv.csv")
        assert text.splitlines()[0] == "k_x,k_y,eta_x,eta_y,mean,sd,n_failed"
        assert (tmp_path / "cv.csv").read_text() == text

    def test_unknown_fitter(self):
        with pytest.raises(InvalidInputError):
            make_fitter("pls", None)
