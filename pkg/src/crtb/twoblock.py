"""Dense and sparse twoblock dimension reduction (non-robust baseline).

Both blocks are reduced by sequential SVD deflation of their
cross-covariance; the X weights come from the left and the Y weights from
the right singular vectors.  Sparsity is induced by soft-thresholding each
weight vector relative to its largest entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateError, InvalidInputError, RankDeficiencyError
from .preprocess import as_block


@dataclass(frozen=True)
class TwoblockModel:
    """Fitted twoblock decomposition on centered (standardised) data.

    Attributes
    ----------
    W, P, T : ndarray
        X-block weights (p, kx), loadings (p, kx) and scores (n, kx).
    V, Q, U : ndarray
        Y-block weights (q, ky), loadings (q, ky) and scores (n, ky).
    Bs : ndarray
        Coefficients (p, q) on the scale of the fitted data.
    eta_x, eta_y : float
        Sparsity parameters used for the weights.
    k_x, k_y : int
        Effective numbers of components (may be below the requested counts
        when the deflated cross-covariance vanished).
    """

    W: np.ndarray
    P: np.ndarray
    T: np.ndarray
    V: np.ndarray
    Q: np.ndarray
    U: np.ndarray
    Bs: np.ndarray
    eta_x: float = 0.0
    eta_y: float = 0.0
    k_x: int = 0
    k_y: int = 0

    @property
    def selected_x(self) -> np.ndarray:
        """Boolean mask of X variables with a nonzero weight in any component."""
        return np.any(self.W != 0, axis=1)

    @property
    def selected_y(self) -> np.ndarray:
        return np.any(self.V != 0, axis=1)


def _check_eta(eta: float, name: str) -> float:
    eta = float(eta)
    if not 0.0 <= eta < 1.0:
        raise InvalidInputError(f"{name} must lie in [0, 1), got {eta!r}")
    return eta


def soft_threshold(w, eta: float) -> np.ndarray:
    """Shrink ``w`` by ``eta`` times its sup-norm, truncate at zero and
    renormalise to unit length."""
    eta = _check_eta(eta, "eta")
    w = np.asarray(w, dtype=float)
    if eta > 0.0 and not np.any(w):
        raise DegenerateError("cannot soft-threshold an all-zero weight vector")
    return kernels.backend.soft_threshold(w, eta)


def coefficients(model_or_parts, Yc) -> np.ndarray:
    """Bilinear coefficient matrix mapping the X block onto ``Yc``.

    Computes ``W (P'W)^-1 (T'T)^-1 T'Y V V'``, i.e. the regression of Y on
    the X scores expressed in X coordinates, projected onto the span of the
    Y weights.
    """
    if isinstance(model_or_parts, TwoblockModel):
        W, P, T, V = model_or_parts.W, model_or_parts.P, model_or_parts.T, model_or_parts.V
    else:
        W, P, T, V = model_or_parts
    Yc = as_block(Yc, "Yc")
    PW = P.T @ W
    TT = T.T @ T
    try:
        if np.linalg.cond(PW) > 1e12 or np.linalg.cond(TT) > 1e14:
            raise np.linalg.LinAlgError
        C = np.linalg.solve(TT, T.T @ Yc)
        R = np.linalg.solve(PW.T, W.T).T
    except np.linalg.LinAlgError:
        raise RankDeficiencyError("score/weight system is singular") from None
    return R @ C @ V @ V.T


def fit_twoblock(Xc, Yc, k_x: int, k_y: int, eta_x: float = 0.0, eta_y: float = 0.0) -> TwoblockModel:
    """Fit the twoblock model on centered blocks.

    Raises
    ------
    NoAssociationError
        If the cross-covariance is zero before the first component.
    RankDeficiencyError
        If a score vector degenerates.
    """
    Xc, Yc = as_block(Xc, "Xc"), as_block(Yc, "Yc")
    n, p = Xc.shape
    q = Yc.shape[1]
    if Yc.shape[0] != n:
        raise InvalidInputError(f"X has {n} rows but Y has {Yc.shape[0]}")
    if not 1 <= k_x <= min(n - 1, p):
        raise InvalidInputError(f"k_x={k_x} outside [1, min(n-1, p)={min(n - 1, p)}]")
    if not 1 <= k_y <= min(n - 1, q):
        raise InvalidInputError(f"k_y={k_y} outside [1, min(n-1, q)={min(n - 1, q)}]")
    eta_x, eta_y = _check_eta(eta_x, "eta_x"), _check_eta(eta_y, "eta_y")
    W, P, T, V, Q, U, hx, hy = kernels.backend.twoblock_core(Xc, Yc, int(k_x), int(k_y), eta_x, eta_y)
    Bs = coefficients((W, P, T, V), Yc)
    return TwoblockModel(W, P, T, V, Q, U, Bs, eta_x, eta_y, hx, hy)


def predict_std(model: TwoblockModel, Xc) -> np.ndarray:
    Xc = as_block(Xc, "Xc")
    if Xc.shape[1] != model.Bs.shape[0]:
        raise InvalidInputError(f"expected {model.Bs.shape[0]} columns, got {Xc.shape[1]}")
    return Xc @ model.Bs
