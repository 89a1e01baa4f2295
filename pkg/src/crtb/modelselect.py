"""Weighted prediction error and k-fold cross-validation over sparsity and
component grids."""

from __future__ import annotations

import csv
import io
import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CrtbError, InvalidInputError
from .preprocess import as_block

log = logging.getLogger(__name__)

FITTERS = ("tb_dense", "tb_sparse", "crtb_dense", "crtb_sparse")


def inverse_variance_weights(col_vars) -> np.ndarray:
    v = np.asarray(col_vars, dtype=float).ravel()
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise InvalidInputError("column variances must be finite and positive")
    w = 1.0 / v
    return w / w.sum()


def wmse(Y, Yhat, col_vars, mode: str = "mean_ratio") -> float:
    """Column-variance weighted mean squared error.

    ``mode="mean_ratio"`` averages ``MSE_j / Var_j`` over columns;
    ``mode="normalized"`` sums ``w_j MSE_j`` with ``w_j`` proportional to
    ``1 / Var_j`` and summing to one.
    """
    Y, Yhat = as_block(Y, "Y"), as_block(Yhat, "Yhat")
    if Y.shape != Yhat.shape:
        raise InvalidInputError(f"shape mismatch {Y.shape} vs {Yhat.shape}")
    v = np.asarray(col_vars, dtype=float).ravel()
    if v.size != Y.shape[1]:
        raise InvalidInputError("need one variance per column")
    w = inverse_variance_weights(v)
    mse_cols = np.mean((Y - Yhat) ** 2, axis=0)
    if mode == "mean_ratio":
        return float(np.mean(mse_cols / v))
    if mode == "normalized":
        return float(np.sum(w * mse_cols))
    raise InvalidInputError(f"unknown wmse mode {mode!r}")


@dataclass(frozen=True)
class CvGrid:
    eta_x: tuple[float, ...] = (0.3, 0.5, 0.7)
    eta_y: tuple[float, ...] = (0.0,)
    k_x: tuple[int, ...] = (3,)
    k_y: tuple[int, ...] = (3,)
    folds: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in ("eta_x", "eta_y", "k_x", "k_y"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise InvalidInputError(f"grid axis {name} is empty")
            object.__setattr__(self, name, vals)
        if self.folds < 2:
            raise InvalidInputError("need at least 2 folds")

    def cells(self, sparse: bool):
        etas_x = self.eta_x if sparse else (0.0,)
        etas_y = self.eta_y if sparse else (0.0,)
        return list(itertools.product(self.k_x, self.k_y, etas_x, etas_y))


@dataclass
class CvResult:
    best: dict
    table: list[dict]
    folds: np.ndarray
    errors: list[str] = field(default_factory=list)

    def to_csv(self, path_or_buf=None) -> str:
        cols = ["k_x", "k_y", "eta_x", "eta_y", "mean", "sd", "n_failed"]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in self.table:
            writer.writerow({c: repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols})
        text = buf.getvalue()
        if path_or_buf is not None:
            with open(path_or_buf, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    """Fold index per row from a seeded shuffle; fold sizes differ by at most one."""
    if n < 2 * folds:
        raise InvalidInputError(f"n={n} too small for {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    out = np.empty(n, dtype=int)
    for f, idx in enumerate(np.array_split(perm, folds)):
        out[idx] = f
    return out


def make_fitter(fitter: str, cfg):
    """Return ``fit(X, Y, k_x, k_y, eta_x, eta_y) -> fit object with predict``."""
    from .estimator import CrtbConfig, fit_crtb, fit_tb

    cfg = cfg or CrtbConfig()
    if fitter not in FITTERS:
        raise InvalidInputError(f"unknown fitter {fitter!r}; choose from {FITTERS}")
    if fitter.startswith("tb"):
        def fit(X, Y, kx, ky, ex, ey):
            return fit_tb(X, Y, kx, ky, ex, ey, cfg.location, cfg.scale)
    else:
        def fit(X, Y, kx, ky, ex, ey):
            return fit_crtb(X, Y, replace(cfg, k_x=kx, k_y=ky, eta_x=ex, eta_y=ey))
    return fit


def _better(a: dict, b: dict) -> bool:
    """True when grid cell ``a`` beats ``b``: lower mean, ties to sparser then smaller."""
    if not np.isclose(a["mean"], b["mean"], rtol=1e-9, atol=1e-12):
        return a["mean"] < b["mean"]
    key_a = (-a["eta_x"], -a["eta_y"], a["k_x"], a["k_y"])
    key_b = (-b["eta_x"], -b["eta_y"], b["k_x"], b["k_y"])
    return key_a < key_b


def kfold_cv(X, Y, grid: CvGrid, fitter: str = "crtb_sparse", cfg=None) -> CvResult:
    """Grid search by k-fold cross-validation.

    Each grid cell is fit on all but one fold and scored on the held-out
    fold with the mean-ratio wMSE, using response variances from the
    training folds.  Failed fits score +inf and are recorded.
    """
    X, Y = as_block(X, "X"), as_block(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise InvalidInputError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    n = X.shape[0]
    assign = fold_assignment(n, grid.folds, grid.seed)
    fit = make_fitter(fitter, cfg)
    table, errors = [], []
    for kx, ky, ex, ey in grid.cells(sparse=fitter.endswith("sparse")):
        scores = []
        for f in range(grid.folds):
            train, test = assign != f, assign == f
            try:
                model = fit(X[train], Y[train], kx, ky, ex, ey)
                col_vars = np.var(Y[train], axis=0, ddof=1)
                scores.append(wmse(Y[test], model.predict(X[test]), col_vars))
            except (CrtbError, np.linalg.LinAlgError) as exc:
                msg = f"k_x={kx} k_y={ky} eta_x={ex} eta_y={ey} fold={f}: {exc}"
                log.info("cv fit failed: %s", msg)
                errors.append(msg)
                scores.append(np.inf)
        scores = np.asarray(scores)
        finite = np.isfinite(scores)
        table.append(
            {
                "k_x": kx,
                "k_y": ky,
                "eta_x": float(ex),
                "eta_y": float(ey),
                "mean": float(scores.mean()) if finite.all() else np.inf,
                "sd": float(scores.std(ddof=1)) if finite.all() else np.inf,
                "n_failed": int((~finite).sum()),
            }
        )
    best = table[0]
    for row in table[1:]:
        if _better(row, best):
            best = row
    return CvResult(best=dict(best), table=table, folds=assign, errors=errors)
