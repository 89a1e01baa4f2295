"""Univariate robust estimators, distribution quantiles and the leading
singular triple used by the twoblock deflation.

All functions are pure and operate on 1-D (or, for ``svd_leading``, 2-D)
float arrays.
"""

from __future__ import annotations

import enum
import math

import numpy as np
from scipy import special

from . import kernels
from .errors import DegenerateError, InvalidInputError

MAD_CONSISTENCY = 1.4826
TAU_C = 3.0


class LocationKind(str, enum.Enum):
    MEAN = "mean"
    MEDIAN = "median"


class RobustScaleKind(str, enum.Enum):
    STD = "std"
    MAD = "mad"
    TAU2 = "tau2"


def _as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 0:
        raise InvalidInputError("empty vector")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("vector contains non-finite values")
    return v


def median(v) -> float:
    """Median; even lengths average the two central order statistics."""
    return float(np.median(_as_vector(v)))


def mad(v) -> float:
    """Median absolute deviation scaled by 1.4826.

    Returns 0 for vectors whose majority is constant; callers decide how to
    handle a zero scale.
    """
    v = _as_vector(v)
    return MAD_CONSISTENCY * float(np.median(np.abs(v - np.median(v))))


def weighted_median(v, w) -> float:
    """Lower weighted median.

    The smallest value (in sorted order) at which the cumulative weight
    reaches half of the total weight.
    """
    v = _as_vector(v)
    w = np.asarray(w, dtype=float).ravel()
    if w.shape != v.shape:
        raise InvalidInputError(f"length mismatch: {v.size} values, {w.size} weights")
    if np.any(w < 0):
        raise InvalidInputError("weights must be nonnegative")
    if not w.sum() > 0:
        raise InvalidInputError("weights sum to zero")
    return kernels.backend.weighted_median(v, w)


def tau_consistency(c: float = TAU_C) -> float:
    """E[min(Z^2, c^2)] for standard normal Z."""
    phi = math.exp(-0.5 * c * c) / math.sqrt(2.0 * math.pi)
    tail = special.ndtr(-c)
    return float((1.0 - 2.0 * tail) - 2.0 * c * phi + 2.0 * c * c * tail)


_KAPPA = tau_consistency()


def tau2_scale(v, c: float = TAU_C) -> float:
    """tau-scale with a truncated-square rho, started from the MAD.

    Raises
    ------
    DegenerateError
        If the MAD of ``v`` is zero.
    """
    v = _as_vector(v)
    s0 = mad(v)
    if s0 == 0.0:
        raise DegenerateError("tau2 scale undefined: MAD is zero")
    kappa = _KAPPA if c == TAU_C else tau_consistency(c)
    r2 = ((v - np.median(v)) / s0) ** 2
    tau_sq = s0 * s0 * np.minimum(r2, c * c).sum() / (v.size * kappa)
    return float(math.sqrt(tau_sq))


def normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise InvalidInputError(f"probability must lie in (0, 1), got {p!r}")
    return float(special.ndtri(p))


def chi2_quantile(p: float, k: int) -> float:
    if not 0.0 < p < 1.0:
        raise InvalidInputError(f"probability must lie in (0, 1), got {p!r}")
    if int(k) != k or k < 1:
        raise InvalidInputError(f"degrees of freedom must be a positive integer, got {k!r}")
    return float(2.0 * special.gammaincinv(0.5 * k, p))


def svd_leading(M) -> tuple[np.ndarray, float, np.ndarray]:
    """Leading singular triple ``(u, s, v)`` of ``M``.

    The sign is fixed so that the largest-magnitude entry of ``u`` is
    positive (first such entry on ties), making the output reproducible.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.size == 0:
        raise InvalidInputError("svd_leading expects a nonempty 2-D matrix")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("matrix has non-finite entries")
    return kernels.backend.svd_leading(M)
