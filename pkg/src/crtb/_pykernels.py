"""Pure numpy implementations of the hot kernels.

Mirrors the compiled ``_ckernels`` extension function for function; the
selector in :mod:`crtb.kernels` picks one of the two at import time.
Inputs are assumed validated by the public wrappers.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateError, NoAssociationError, RankDeficiencyError

NAME = "python"

HAMPEL, HUBER, FAIR, NONE = 0, 1, 2, 3

MAD_CONSISTENCY = 1.4826
STOP_RATIO = 1e-12
MIN_SCORE_SS = 1e-24


def weighted_median(v, w):
    order = np.argsort(v, kind="stable")
    cw = np.cumsum(w[order])
    idx = int(np.searchsorted(cw, 0.5 * cw[-1], side="left"))
    return float(v[order[min(idx, v.size - 1)]])


def _fix_sign(x):
    j = int(np.argmax(np.abs(x)))
    return -x if x[j] < 0 else x


def svd_leading(M):
    if not np.any(M):
        raise DegenerateError("leading singular triple of an all-zero matrix")
    u, s, vt = np.linalg.svd(M, full_matrices=False)
    u1, v1 = u[:, 0], vt[0]
    j = int(np.argmax(np.abs(u1)))
    if u1[j] < 0:
        u1, v1 = -u1, -v1
    return u1.copy(), float(s[0]), v1.copy()


def soft_threshold(w, eta):
    if eta == 0.0:
        return w.copy()
    # work relative to the sup-norm so tiny vectors cannot underflow
    rel = np.abs(w) / np.max(np.abs(w))
    out = np.sign(w) * np.maximum(rel - eta, 0.0)
    norm = np.sqrt(out @ out)
    assert norm > 0.0, "soft-thresholding removed every entry"
    return out / norm


def psi_weights(d, a, b, r, family):
    d = np.asarray(d, dtype=float)
    out = np.ones_like(d)
    if family == NONE:
        return out
    if family == HUBER:
        big = d > a
        out[big] = a / d[big]
        return out
    if family == FAIR:
        return 1.0 / (1.0 + d / a) ** 2
    mid = (d > a) & (d <= b)
    out[mid] = a / d[mid]
    desc = (d > b) & (d <= r)
    out[desc] = a * (r - d[desc]) / (d[desc] * (r - b))
    out[d > r] = 0.0
    return out


def masked_row_rms(Z, mask):
    clean = mask.astype(bool)
    m = clean.sum(axis=1)
    ss = np.where(clean, Z * Z, 0.0).sum(axis=1)
    d = np.zeros(Z.shape[0])
    nz = m > 0
    d[nz] = np.sqrt(ss[nz] / m[nz])
    return d, m


def masked_median_mad(Z, mask):
    """Per-column median and MAD over clean cells (all cells when fewer
    than two are clean)."""
    p = Z.shape[1]
    med, mad = np.empty(p), np.empty(p)
    clean = mask.astype(bool)
    for j in range(p):
        col = Z[clean[:, j], j] if clean[:, j].sum() >= 2 else Z[:, j]
        med[j] = np.median(col)
        mad[j] = MAD_CONSISTENCY * np.median(np.abs(col - med[j]))
    return med, mad


def prefilter_mask(Xs, threshold):
    absx = np.abs(Xs)
    mhat = np.median(absx, axis=0)
    mask = np.ones(Xs.shape, dtype=np.uint8)
    ok = mhat > 0
    if np.any(ok):
        flagged = absx[:, ok] / (MAD_CONSISTENCY * mhat[ok]) > threshold
        mask[:, ok] = (~flagged).astype(np.uint8)
    return mask, np.flatnonzero(~ok)


def impute_cells(Z, mask, W, P):
    clean = mask.astype(bool)
    out = Z.copy()
    rows = np.flatnonzero(~clean.all(axis=1))
    if rows.size == 0:
        return out
    zc = np.where(clean[rows], Z[rows], 0.0)
    recon = (zc @ W) @ P.T
    out[rows] = np.where(clean[rows], Z[rows], recon)
    return out


def twoblock_core(X, Y, kx, ky, eta_x, eta_y):
    """Joint SVD deflation of X and Y.

    Returns ``(W, P, T, V, Q, U, kx_eff, ky_eff)`` with unused trailing
    columns trimmed when extraction stops early.
    """
    n, p = X.shape
    q = Y.shape[1]
    Xh = np.array(X, dtype=float, copy=True)
    Yh = np.array(Y, dtype=float, copy=True)
    W, P, T = np.zeros((p, kx)), np.zeros((p, kx)), np.zeros((n, kx))
    V, Q, U = np.zeros((q, ky)), np.zeros((q, ky)), np.zeros((n, ky))
    s0 = 0.0
    hx = hy = 0
    for h in range(max(kx, ky)):
        M = Xh.T @ Yh / n
        if not np.any(M):
            if h == 0:
                raise NoAssociationError("cross-covariance of X and Y is zero")
            break
        u, s, v = svd_leading(M)
        if h == 0:
            s0 = s
        elif s < STOP_RATIO * s0:
            break
        if h < kx:
            w = soft_threshold(u, eta_x)
            t = Xh @ w
            tt = t @ t
            if tt < MIN_SCORE_SS:
                raise RankDeficiencyError(f"degenerate X score at component {h + 1}")
            W[:, h], T[:, h] = w, t
            P[:, h] = Xh.T @ t / tt
            hx = h + 1
            if hx < kx:
                Xh -= np.outer(t, P[:, h])
        if h < ky:
            vv = soft_threshold(_fix_sign(v), eta_y)
            uu = Yh @ vv
            uu2 = uu @ uu
            if uu2 < MIN_SCORE_SS:
                raise RankDeficiencyError(f"degenerate Y score at component {h + 1}")
            V[:, h], U[:, h] = vv, uu
            Q[:, h] = Yh.T @ uu / uu2
            hy = h + 1
            if hy < ky:
                Yh -= np.outer(uu, Q[:, h])
    return W[:, :hx], P[:, :hx], T[:, :hx], V[:, :hy], Q[:, :hy], U[:, :hy], hx, hy
