"""Cellwise robust twoblock (CRTB) estimator and the original-scale
twoblock baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateError, InvalidInputError
from .numkernel import LocationKind, RobustScaleKind
from .preprocess import (
    ScalingModel,
    as_block,
    as_mask,
    fit_scaler,
    inverse_transform,
    prefilter,
    transform,
)
from .robustweights import Calibration, PsiSpec, case_weights, starting_weights
from .twoblock import TwoblockModel, fit_twoblock

log = logging.getLogger(__name__)

CELL_FLAG_LEVEL = 0.5


def default_psi() -> PsiSpec:
    """Hampel weights with probabilities (0.75, 0.90, 0.95) on chi-square quantile cutoffs."""
    return PsiSpec(calibration=Calibration.QUANTILE)


@dataclass(frozen=True)
class CrtbConfig:
    k_x: int = 3
    k_y: int = 3
    eta_x: float = 0.0
    eta_y: float = 0.0
    location: LocationKind = LocationKind.MEDIAN
    scale: RobustScaleKind = RobustScaleKind.MAD
    alpha_cell: float = 0.99
    psi: PsiSpec = field(default_factory=default_psi)
    tol: float = 1e-4
    max_iter: int = 25
    initializer: str = "prefilter"

    def __post_init__(self):
        object.__setattr__(self, "location", LocationKind(self.location))
        object.__setattr__(self, "scale", RobustScaleKind(self.scale))
        if self.initializer not in ("prefilter", "external_mask"):
            raise InvalidInputError(f"unknown initializer {self.initializer!r}")
        if self.max_iter < 1:
            raise InvalidInputError("max_iter must be at least 1")
        if not self.tol > 0:
            raise InvalidInputError("tol must be positive")
        if not 0.0 < self.alpha_cell < 1.0:
            raise InvalidInputError("alpha_cell must lie in (0, 1)")


@dataclass(frozen=True)
class TwoblockFit:
    """A twoblock model together with the scalers that map it back to the
    original units."""

    model: TwoblockModel
    scaler_x: ScalingModel
    scaler_y: ScalingModel
    B: np.ndarray
    intercept: np.ndarray

    def predict(self, Xnew) -> np.ndarray:
        return predict(self, Xnew)


@dataclass(frozen=True)
class CrtbFit(TwoblockFit):
    config: CrtbConfig = field(default_factory=CrtbConfig)
    floor_x: np.ndarray = None
    floor_y: np.ndarray = None
    wx: np.ndarray = None
    wy: np.ndarray = None
    Xs_imputed: np.ndarray = None
    Ys_imputed: np.ndarray = None
    n_iter: int = 0
    converged: bool = False
    trace: tuple[float, ...] = ()


def converged(Bs_prev, Bs_curr, tol: float) -> bool:
    """Relative change of the squared Frobenius norm below ``tol``."""
    prev = float(np.sum(np.square(Bs_prev)))
    curr = float(np.sum(np.square(Bs_curr)))
    if prev == 0.0:
        raise DegenerateError("previous coefficient matrix is zero")
    return abs(curr - prev) / prev < tol


def rescale_coefficients(Bs, scaler_x: ScalingModel, scaler_y: ScalingModel) -> np.ndarray:
    Bs = np.asarray(Bs, dtype=float)
    if Bs.shape != (scaler_x.n_features, scaler_y.n_features):
        raise InvalidInputError(f"coefficient shape {Bs.shape} does not match the scalers")
    return Bs * (scaler_y.scales[None, :] / scaler_x.scales[:, None])


def intercept(Y, X, B, location=LocationKind.MEDIAN) -> np.ndarray:
    R = as_block(Y, "Y") - as_block(X, "X") @ B
    if LocationKind(location) is LocationKind.MEDIAN:
        return np.median(R, axis=0)
    return R.mean(axis=0)


def impute_cells(Zs_init, mask, W, P) -> np.ndarray:
    """Replace flagged cells by their reconstruction from partial scores.

    Scores are computed from the clean cells only (flagged cells taken as
    0); clean cells are returned unchanged.
    """
    Zs_init = as_block(Zs_init, "Zs_init")
    mask = as_mask(mask, Zs_init.shape)
    W, P = np.asarray(W, dtype=float), np.asarray(P, dtype=float)
    if W.shape != P.shape or W.shape[0] != Zs_init.shape[1]:
        raise InvalidInputError("weights and loadings must both be (p, k)")
    return kernels.backend.impute_cells(Zs_init, mask, W, P)


def fit_tb(X, Y, k_x, k_y, eta_x=0.0, eta_y=0.0, location="mean", scale="std") -> TwoblockFit:
    """Plain (non-robust) twoblock fit in original units."""
    X, Y = as_block(X, "X"), as_block(Y, "Y")
    _check_rows(X, Y)
    sx, sy = fit_scaler(X, location, scale), fit_scaler(Y, location, scale)
    model = fit_twoblock(transform(X, sx), transform(Y, sy), k_x, k_y, eta_x, eta_y)
    B = rescale_coefficients(model.Bs, sx, sy)
    return TwoblockFit(model, sx, sy, B, intercept(Y, X, B, location))


def _check_rows(X, Y):
    if X.shape[0] != Y.shape[0]:
        raise InvalidInputError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")


def _standardise_and_filter(Z, cfg: CrtbConfig):
    """Two-pass robust standardisation followed by the pre-filter.

    A first scaler on all cells drives a provisional pre-filter; centers and
    scales are then re-estimated from the cells it left clean, so that a
    large block of shifted cells cannot inflate the column scales.  The
    floor mask comes from pre-filtering the re-standardised block.
    """
    s0 = fit_scaler(Z, cfg.location, cfg.scale)
    provisional = prefilter(transform(Z, s0), cfg.alpha_cell)
    s = fit_scaler(Z, cfg.location, cfg.scale, mask=provisional)
    Zs = transform(Z, s)
    return s, Zs, prefilter(Zs, cfg.alpha_cell)


def _row_scale(Z, w):
    return Z * np.sqrt(w)[:, None]


def fit_crtb(X, Y, cfg: CrtbConfig | None = None, mask_x=None, mask_y=None) -> CrtbFit:
    """Fit cellwise robust twoblock.

    Parameters
    ----------
    X, Y : array_like
        Predictor block (n, p) and response block (n, q).
    cfg : CrtbConfig
        Estimator settings; defaults reproduce the simulation settings
        (median/MAD, alpha_cell 0.99, Hampel (0.75, 0.90, 0.95), 25 iterations).
    mask_x, mask_y : array_like, optional
        Floor masks (1 = clean) used instead of the pre-filter when
        ``cfg.initializer == "external_mask"``.

    Returns
    -------
    CrtbFit
        Non-convergence is reported through ``converged=False``, not raised.
    """
    cfg = cfg or CrtbConfig()
    X, Y = as_block(X, "X"), as_block(Y, "Y")
    _check_rows(X, Y)
    n = X.shape[0]
    if n < max(cfg.k_x, cfg.k_y) + 2:
        raise InvalidInputError(f"n={n} too small for {max(cfg.k_x, cfg.k_y)} components")

    if cfg.initializer == "external_mask":
        if mask_x is None or mask_y is None:
            raise InvalidInputError("external_mask initializer needs mask_x and mask_y")
        floor_x, floor_y = as_mask(mask_x, X.shape), as_mask(mask_y, Y.shape)
        sx = fit_scaler(X, cfg.location, cfg.scale, mask=floor_x)
        sy = fit_scaler(Y, cfg.location, cfg.scale, mask=floor_y)
        Xs, Ys = transform(X, sx), transform(Y, sy)
    else:
        sx, Xs, floor_x = _standardise_and_filter(X, cfg)
        sy, Ys, floor_y = _standardise_and_filter(Y, cfg)

    Xi = np.where(floor_x == 1, Xs, 0.0)
    Yi = np.where(floor_y == 1, Ys, 0.0)
    wx = starting_weights(Xi, floor_x, cfg.psi, cfg.k_x)
    wy = starting_weights(Yi, floor_y, cfg.psi, cfg.k_y)
    Xw, Yw = _row_scale(Xi, wx), _row_scale(Yi, wy)

    backend = kernels.backend
    trace: list[float] = []
    done = False
    model = None
    for it in range(1, cfg.max_iter + 1):
        model = fit_twoblock(Xw, Yw, cfg.k_x, cfg.k_y, cfg.eta_x, cfg.eta_y)
        wx = case_weights(Xi @ model.W, Xs @ model.W, cfg.psi, wx)
        wy = case_weights(Yi @ model.V, Ys @ model.V, cfg.psi, wy)
        Xi = backend.impute_cells(Xi, floor_x, model.W, model.P)
        Yi = backend.impute_cells(Yi, floor_y, model.V, model.Q)
        Xw, Yw = _row_scale(Xi, wx), _row_scale(Yi, wy)
        trace.append(float(np.sum(np.square(model.Bs))))
        if it > 1:
            if trace[-2] == 0.0:
                raise DegenerateError("coefficient matrix collapsed to zero")
            if abs(trace[-1] - trace[-2]) / trace[-2] < cfg.tol:
                done = True
                break
    log.debug("crtb stopped after %d iterations (converged=%s)", it, done)

    B = rescale_coefficients(model.Bs, sx, sy)
    return CrtbFit(
        model=model,
        scaler_x=sx,
        scaler_y=sy,
        B=B,
        intercept=intercept(Y, X, B, cfg.location),
        config=cfg,
        floor_x=floor_x,
        floor_y=floor_y,
        wx=wx,
        wy=wy,
        Xs_imputed=Xi,
        Ys_imputed=Yi,
        n_iter=it,
        converged=done,
        trace=tuple(trace),
    )


def predict(fit: TwoblockFit, Xnew) -> np.ndarray:
    Xnew = as_block(Xnew, "Xnew")
    if Xnew.shape[1] != fit.B.shape[0]:
        raise InvalidInputError(f"expected {fit.B.shape[0]} columns, got {Xnew.shape[1]}")
    return Xnew @ fit.B + fit.intercept


def predict_std_scale(fit: TwoblockFit, Xnew) -> np.ndarray:
    """Predictions computed on the standardised scale and mapped back."""
    Zs = transform(Xnew, fit.scaler_x) @ fit.model.Bs
    return inverse_transform(Zs, fit.scaler_y)


def cell_weight_report(fit: CrtbFit) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-cell weights (case weight times floor indicator) and outlier flags.

    Returns ``(weights_x, weights_y, flags_x, flags_y)``; flags mark cells
    whose weight is below 0.5.
    """
    cx = fit.wx[:, None] * fit.floor_x
    cy = fit.wy[:, None] * fit.floor_y
    return cx, cy, (cx < CELL_FLAG_LEVEL).astype(np.uint8), (cy < CELL_FLAG_LEVEL).astype(np.uint8)
