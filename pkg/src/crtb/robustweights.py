"""psi-function case weights calibrated on chi-square quantiles."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateError, DegenerateRowWarning, InvalidInputError
from .numkernel import chi2_quantile, weighted_median
from .preprocess import as_block, as_mask


class PsiFamily(str, enum.Enum):
    HAMPEL = "hampel"
    HUBER = "huber"
    FAIR = "fair"
    # Constant weight 1: turns the reweighting off (ablations, baseline checks).
    NONE = "none"


_FAMILY_CODE = {
    PsiFamily.HAMPEL: kernels._pykernels.HAMPEL,
    PsiFamily.HUBER: kernels._pykernels.HUBER,
    PsiFamily.FAIR: kernels._pykernels.FAIR,
    PsiFamily.NONE: kernels._pykernels.NONE,
}


class Calibration(str, enum.Enum):
    """How chi-square quantiles become cutoffs for median-normalised distances.

    ``median_ratio`` divides each quantile by the chi-square median and takes
    the square root, so a distance equal to the median sits at 1 on the
    chi scale.  ``quantile`` uses the chi-square quantiles themselves, which
    is far more lenient: a clean row is only downweighted when its distance
    is several times the median.
    """

    MEDIAN_RATIO = "median_ratio"
    QUANTILE = "quantile"


@dataclass(frozen=True)
class PsiSpec:
    family: PsiFamily = PsiFamily.HAMPEL
    probs: tuple[float, float, float] = (0.75, 0.90, 0.95)
    calibration: Calibration = Calibration.MEDIAN_RATIO

    def __post_init__(self):
        object.__setattr__(self, "family", PsiFamily(self.family))
        object.__setattr__(self, "calibration", Calibration(self.calibration))
        probs = tuple(float(a) for a in self.probs)
        if len(probs) != 3:
            raise InvalidInputError("psi spec needs three probabilities")
        if not 0.0 < probs[0] < probs[1] < probs[2] < 1.0:
            raise InvalidInputError(f"probabilities must satisfy 0 < a1 < a2 < a3 < 1, got {probs}")
        object.__setattr__(self, "probs", probs)


def hampel_cutoffs(spec: PsiSpec, k: int) -> tuple[float, float, float]:
    """Cutoffs ``(a, b, r)`` for median-normalised distances.

    With the median-ratio calibration ``c_j = sqrt(chi2_k(alpha_j) /
    chi2_k(0.5))``; with the quantile calibration ``c_j = chi2_k(alpha_j)``.
    """
    q = [chi2_quantile(p, k) for p in spec.probs]
    if spec.calibration is Calibration.QUANTILE:
        return q[0], q[1], q[2]
    med = chi2_quantile(0.5, k)
    a, b, r = (float(np.sqrt(v / med)) for v in q)
    return a, b, r


def psi_weight(d, cutoffs, family=PsiFamily.HAMPEL):
    """Weights in [0, 1] for nonnegative distances ``d``.

    hampel: 1 up to ``a``, ``a/d`` up to ``b``, linear descent to 0 at ``r``.
    huber: 1 up to ``a``, ``a/d`` beyond.
    fair: ``1 / (1 + d/a)**2``.

    Scalars in, scalar out; arrays in, array out.
    """
    scalar = np.ndim(d) == 0
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise InvalidInputError("distances must be finite and nonnegative")
    a, b, r = (float(c) for c in cutoffs)
    w = kernels.backend.psi_weights(d, a, b, r, _FAMILY_CODE[PsiFamily(family)])
    return float(w[0]) if scalar else w


def starting_weights(Zs, mask, spec: PsiSpec, k: int) -> np.ndarray:
    """Case weights from root-mean-square row norms over clean cells.

    Distances are normalised by their median over rows before the psi
    function is applied.  Rows without any clean cell get weight 1.
    """
    Zs = as_block(Zs, "Zs")
    mask = as_mask(mask, Zs.shape)
    d, m = kernels.backend.masked_row_rms(Zs, mask)
    if not np.any(m > 0):
        raise DegenerateError("every row is fully flagged; cannot initialise weights")
    empty = int(np.sum(m == 0))
    if empty:
        warnings.warn(f"{empty} rows have no clean cells; given weight 1", DegenerateRowWarning, stacklevel=2)
    med = float(np.median(d[m > 0]))
    if med <= 0:
        return np.ones(Zs.shape[0])
    w = kernels.backend.psi_weights(d / med, *hampel_cutoffs(spec, k), _FAMILY_CODE[spec.family])
    w[m == 0] = 1.0
    return w


def _robust_center_scale(T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    center, scale = kernels.backend.masked_median_mad(T, np.ones(T.shape, dtype=np.uint8))
    bad = scale <= 0
    if np.any(bad):
        sd = np.std(T[:, bad], axis=0, ddof=1) if T.shape[0] > 1 else np.zeros(bad.sum())
        scale[bad] = np.where(sd > 0, sd, 1.0)
    return center, scale


def score_distances(T_ref, T_cont) -> tuple[np.ndarray, np.ndarray]:
    """Distances of reference and contaminated scores after a median/MAD
    scaler fit on the reference scores."""
    center, scale = _robust_center_scale(T_ref)
    d_ref = np.sqrt((((T_ref - center) / scale) ** 2).sum(axis=1))
    d_cont = np.sqrt((((T_cont - center) / scale) ** 2).sum(axis=1))
    return d_ref, d_cont


def case_weights(T_ref, T_cont, spec: PsiSpec, prior) -> np.ndarray:
    """Dual-reference case weights.

    A median/MAD scaler is fit on ``T_ref``; distances of ``T_cont`` under
    that scaler are normalised by the ``prior``-weighted median of the
    reference distances and mapped through the psi function.
    """
    T_ref, T_cont = as_block(T_ref, "T_ref"), as_block(T_cont, "T_cont")
    if T_ref.shape != T_cont.shape:
        raise InvalidInputError(f"score shapes differ: {T_ref.shape} vs {T_cont.shape}")
    prior = np.asarray(prior, dtype=float)
    if prior.shape != (T_ref.shape[0],):
        raise InvalidInputError("prior weights must have one entry per row")
    d_ref, d_cont = score_distances(T_ref, T_cont)
    if not prior.sum() > 0:
        raise DegenerateError("all prior case weights are zero")
    med = weighted_median(d_ref, prior)
    if med <= 0:
        raise DegenerateError("weighted median of reference score distances is zero")
    k = T_ref.shape[1]
    return kernels.backend.psi_weights(d_cont / med, *hampel_cutoffs(spec, k), _FAMILY_CODE[spec.family])
