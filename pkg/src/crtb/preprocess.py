"""Column-wise standardisation and the model-free cellwise pre-filter."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateColumnWarning, DegenerateError, InvalidInputError
from .numkernel import (
    LocationKind,
    RobustScaleKind,
    mad,
    normal_quantile,
    tau2_scale,
)

# Cell masks are plain uint8 arrays: 1 = clean, 0 = flagged.
CellMask = np.ndarray


def as_block(X, name: str = "X") -> np.ndarray:
    """Coerce to a finite 2-D float array (1-D input becomes one column)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return X


def as_mask(C, shape=None) -> CellMask:
    C = np.asarray(C)
    if shape is not None and C.shape != tuple(shape):
        raise InvalidInputError(f"mask shape {C.shape} does not match data shape {tuple(shape)}")
    if not np.isin(C, (0, 1)).all():
        raise InvalidInputError("mask entries must be 0 or 1")
    return C.astype(np.uint8)


@dataclass(frozen=True)
class ScalingModel:
    """Per-column centers and (strictly positive) scales."""

    centers: np.ndarray
    scales: np.ndarray
    location_kind: LocationKind = LocationKind.MEDIAN
    scale_kind: RobustScaleKind = RobustScaleKind.MAD
    degenerate: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.centers.shape != self.scales.shape:
            raise InvalidInputError("centers and scales differ in length")
        if np.any(self.scales <= 0):
            raise InvalidInputError("scales must be strictly positive")

    @property
    def n_features(self) -> int:
        return self.centers.size


_EPS = np.finfo(float).eps


def _scale_of(col: np.ndarray, kind: RobustScaleKind) -> float:
    if kind is RobustScaleKind.STD:
        return float(np.std(col, ddof=1))
    if kind is RobustScaleKind.MAD:
        return mad(col)
    try:
        return tau2_scale(col)
    except DegenerateError:
        return 0.0


def fit_scaler(X, location="median", scale="mad", mask=None) -> ScalingModel:
    """Estimate a center and scale for every column of ``X``.

    A zero scale, or one negligible next to the column's spread (below
    machine epsilon times the largest absolute deviation), falls back to the
    column standard deviation, and a constant column gets scale 1 with a
    :class:`DegenerateColumnWarning`.

    Parameters
    ----------
    X : array_like, shape (n, p)
    location : {"mean", "median"}
    scale : {"std", "mad", "tau2"}
    mask : array_like of {0, 1}, shape (n, p), optional
        When given, each column is estimated from its clean (mask 1) cells
        only.  Columns with fewer than two clean cells use all cells.
    """
    X = as_block(X)
    location, scale = LocationKind(location), RobustScaleKind(scale)
    n, p = X.shape
    if n < 2:
        raise InvalidInputError(f"need at least 2 rows to fit a scaler, got {n}")
    keep = np.ones(X.shape, dtype=np.uint8) if mask is None else as_mask(mask, X.shape)
    fast = location is LocationKind.MEDIAN and scale is RobustScaleKind.MAD
    if fast:
        centers, scales = kernels.backend.masked_median_mad(X, keep)
    else:
        centers, scales = np.empty(p), np.empty(p)
    degenerate = []
    for j in range(p):
        col = X[:, j]
        if keep[:, j].sum() >= 2:
            col = col[keep[:, j] == 1]
        if not fast:
            centers[j] = np.mean(col) if location is LocationKind.MEAN else np.median(col)
            scales[j] = _scale_of(col, scale)
        floor = _EPS * float(np.max(np.abs(X[:, j] - centers[j])))
        if not scales[j] > floor:
            scales[j] = float(np.std(col, ddof=1))
        if not scales[j] > floor:
            scales[j] = 1.0
            degenerate.append(j)
    if degenerate:
        warnings.warn(
            f"constant columns {degenerate} given unit scale", DegenerateColumnWarning, stacklevel=2
        )
    return ScalingModel(centers, scales, location, scale, tuple(degenerate))


def _check_width(X: np.ndarray, s: ScalingModel) -> None:
    if X.shape[1] != s.n_features:
        raise InvalidInputError(
            f"block has {X.shape[1]} columns but the scaler was fit on {s.n_features}"
        )


def transform(X, s: ScalingModel) -> np.ndarray:
    X = as_block(X)
    _check_width(X, s)
    return (X - s.centers) / s.scales


def inverse_transform(Xs, s: ScalingModel) -> np.ndarray:
    Xs = as_block(Xs)
    _check_width(Xs, s)
    return Xs * s.scales + s.centers


def prefilter_threshold(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha!r}")
    return normal_quantile(0.5 * (1.0 + alpha))


def prefilter(Xs, alpha: float = 0.99) -> CellMask:
    """Flag cells of a standardised block whose MAD-normalised magnitude
    exceeds the two-sided normal quantile at ``alpha``.

    The column MAD is the median of absolute standardised values times
    1.4826.  Columns with zero MAD flag nothing.
    """
    threshold = prefilter_threshold(alpha)
    Xs = as_block(Xs, "Xs")
    mask, zero_cols = kernels.backend.prefilter_mask(Xs, threshold)
    if len(zero_cols):
        warnings.warn(
            f"columns {list(map(int, zero_cols))} have zero MAD; none of their cells are flagged",
            DegenerateColumnWarning,
            stacklevel=2,
        )
    return mask
