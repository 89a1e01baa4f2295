# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled hot kernels.

Function-for-function twin of :mod:`crtb._pykernels`; results agree with
the numpy fallback to rounding error.  Inputs are assumed validated by the
public wrappers.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt
from libcpp.algorithm cimport nth_element

from .errors import DegenerateError, NoAssociationError, RankDeficiencyError

cnp.import_array()

NAME = "compiled"

HAMPEL, HUBER, FAIR, NONE = 0, 1, 2, 3

cdef double MAD_CONSISTENCY = 1.4826
cdef double STOP_RATIO = 1e-12
cdef double MIN_SCORE_SS = 1e-24


cdef double _median_inplace(double* buf, Py_ssize_t m) noexcept nogil:
    """Median of ``buf[0:m]``; reorders the buffer."""
    cdef Py_ssize_t k = m // 2, i
    cdef double hi, lo
    nth_element(buf, buf + k, buf + m)
    hi = buf[k]
    if m % 2:
        return hi
    lo = buf[0]
    for i in range(1, k):
        if buf[i] > lo:
            lo = buf[i]
    return (lo + hi) / 2.0


def weighted_median(double[::1] v, double[::1] w):
    cdef cnp.intp_t[::1] order = np.argsort(v, kind="stable")
    cdef Py_ssize_t n = v.shape[0], i
    cdef double total = 0.0, acc = 0.0, half
    for i in range(n):
        total += w[order[i]]
    half = 0.5 * total
    for i in range(n):
        acc += w[order[i]]
        if acc >= half:
            return v[order[i]]
    return v[order[n - 1]]


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


cdef void _soft_threshold(double[::1] w, double eta, double[::1] out):
    cdef Py_ssize_t i, n = w.shape[0]
    cdef double big = 0.0, a, norm = 0.0
    if eta == 0.0:
        out[:] = w
        return
    for i in range(n):
        if fabs(w[i]) > big:
            big = fabs(w[i])
    # work relative to the sup-norm so tiny vectors cannot underflow
    for i in range(n):
        a = fabs(w[i]) / big - eta
        if a > 0.0:
            out[i] = a if w[i] > 0 else -a
        else:
            out[i] = 0.0
        norm += out[i] * out[i]
    norm = sqrt(norm)
    assert norm > 0.0, "soft-thresholding removed every entry"
    for i in range(n):
        out[i] /= norm


def soft_threshold(w, double eta):
    w = np.ascontiguousarray(w, dtype=float)
    out = np.empty_like(w)
    _soft_threshold(w, eta, out)
    return out


def psi_weights(d, double a, double b, double r, int family):
    cdef double[::1] dv = np.ascontiguousarray(d, dtype=float).ravel()
    cdef Py_ssize_t i, n = dv.shape[0]
    out = np.ones(n)
    cdef double[::1] o = out
    cdef double x
    if family == NONE:
        return out.reshape(np.shape(d))
    for i in range(n):
        x = dv[i]
        if family == HUBER:
            if x > a:
                o[i] = a / x
        elif family == FAIR:
            x = 1.0 + x / a
            o[i] = 1.0 / (x * x)
        else:
            if x <= a:
                pass
            elif x <= b:
                o[i] = a / x
            elif x <= r:
                o[i] = a * (r - x) / (x * (r - b))
            else:
                o[i] = 0.0
    return out.reshape(np.shape(d))


def masked_row_rms(double[:, :] Z, cnp.uint8_t[:, :] mask):
    cdef Py_ssize_t n = Z.shape[0], p = Z.shape[1], i, j
    d = np.zeros(n)
    m = np.zeros(n, dtype=np.intp)
    cdef double[::1] dv = d
    cdef cnp.intp_t[::1] mv = m
    cdef double ss
    for i in range(n):
        ss = 0.0
        for j in range(p):
            if mask[i, j]:
                ss += Z[i, j] * Z[i, j]
                mv[i] += 1
        if mv[i] > 0:
            dv[i] = sqrt(ss / mv[i])
    return d, m


def masked_median_mad(double[:, :] Z, cnp.uint8_t[:, :] mask):
    cdef Py_ssize_t n = Z.shape[0], p = Z.shape[1], i, j, m
    med = np.empty(p)
    mad = np.empty(p)
    cdef double[::1] medv = med, madv = mad
    cdef double[::1] buf = np.empty(n), col = np.empty(n)
    cdef double c
    for j in range(p):
        m = 0
        for i in range(n):
            if mask[i, j]:
                m += 1
        if m >= 2:
            m = 0
            for i in range(n):
                if mask[i, j]:
                    col[m] = Z[i, j]
                    m += 1
        else:
            m = n
            for i in range(n):
                col[i] = Z[i, j]
        buf[:m] = col[:m]
        c = _median_inplace(&buf[0], m)
        for i in range(m):
            buf[i] = fabs(col[i] - c)
        medv[j] = c
        madv[j] = MAD_CONSISTENCY * _median_inplace(&buf[0], m)
    return med, mad


def prefilter_mask(double[:, :] Xs, double threshold):
    cdef Py_ssize_t n = Xs.shape[0], p = Xs.shape[1], i, j
    mask = np.ones((n, p), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] mv = mask
    cdef double[::1] buf = np.empty(n)
    cdef double mhat, denom
    zero = []
    for j in range(p):
        for i in range(n):
            buf[i] = fabs(Xs[i, j])
        mhat = _median_inplace(&buf[0], n)
        if mhat > 0:
            denom = MAD_CONSISTENCY * mhat
            for i in range(n):
                if fabs(Xs[i, j]) / denom > threshold:
                    mv[i, j] = 0
        else:
            zero.append(j)
    return mask, np.asarray(zero, dtype=np.intp)


def impute_cells(double[:, :] Z, cnp.uint8_t[:, :] mask, double[:, :] W, double[:, :] P):
    cdef Py_ssize_t n = Z.shape[0], p = Z.shape[1], k = W.shape[1], i, j, h
    out = np.array(Z, dtype=float, copy=True, order="C")
    cdef double[:, ::1] o = out
    cdef double[::1] t = np.empty(k)
    cdef double acc
    cdef bint dirty
    for i in range(n):
        dirty = False
        for j in range(p):
            if not mask[i, j]:
                dirty = True
                break
        if not dirty:
            continue
        for h in range(k):
            acc = 0.0
            for j in range(p):
                if mask[i, j]:
                    acc += Z[i, j] * W[j, h]
            t[h] = acc
        for j in range(p):
            if not mask[i, j]:
                acc = 0.0
                for h in range(k):
                    acc += t[h] * P[j, h]
                o[i, j] = acc
    return out


cdef double _score_and_loading(double[:, ::1] Zh, double[::1] w, double[::1] t, double[::1] load):
    """t = Zh w and load = Zh' t / t't; returns t't."""
    cdef Py_ssize_t n = Zh.shape[0], p = Zh.shape[1], i, j
    cdef double acc, tt = 0.0
    for i in range(n):
        acc = 0.0
        for j in range(p):
            acc += Zh[i, j] * w[j]
        t[i] = acc
        tt += acc * acc
    if tt < MIN_SCORE_SS:
        return tt
    for j in range(p):
        load[j] = 0.0
    for i in range(n):
        for j in range(p):
            load[j] += Zh[i, j] * t[i]
    for j in range(p):
        load[j] /= tt
    return tt


cdef void _deflate(double[:, ::1] Zh, double[::1] t, double[::1] load) noexcept nogil:
    cdef Py_ssize_t n = Zh.shape[0], p = Zh.shape[1], i, j
    for i in range(n):
        for j in range(p):
            Zh[i, j] -= t[i] * load[j]


def twoblock_core(X, Y, int kx, int ky, double eta_x, double eta_y):
    """Joint SVD deflation of X and Y.

    Returns ``(W, P, T, V, Q, U, kx_eff, ky_eff)`` with unused trailing
    columns trimmed when extraction stops early.
    """
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1], q = Y.shape[1]
    Xh_arr = np.array(X, dtype=float, copy=True, order="C")
    Yh_arr = np.array(Y, dtype=float, copy=True, order="C")
    cdef double[:, ::1] Xh = Xh_arr, Yh = Yh_arr
    Wt, Pt, Tt = np.zeros((kx, p)), np.zeros((kx, p)), np.zeros((kx, n))
    Vt, Qt, Ut = np.zeros((ky, q)), np.zeros((ky, q)), np.zeros((ky, n))
    cdef double[:, ::1] Wv = Wt, Pv = Pt, Tv = Tt, Vv = Vt, Qv = Qt, Uv = Ut
    cdef double s0 = 0.0, s, tt
    cdef int h, hx = 0, hy = 0
    for h in range(max(kx, ky)):
        M = Xh_arr.T @ Yh_arr / n
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
            _soft_threshold(np.ascontiguousarray(u), eta_x, Wv[h])
            tt = _score_and_loading(Xh, Wv[h], Tv[h], Pv[h])
            if tt < MIN_SCORE_SS:
                raise RankDeficiencyError(f"degenerate X score at component {h + 1}")
            hx = h + 1
            if hx < kx:
                _deflate(Xh, Tv[h], Pv[h])
        if h < ky:
            _soft_threshold(np.ascontiguousarray(_fix_sign(v)), eta_y, Vv[h])
            tt = _score_and_loading(Yh, Vv[h], Uv[h], Qv[h])
            if tt < MIN_SCORE_SS:
                raise RankDeficiencyError(f"degenerate Y score at component {h + 1}")
            hy = h + 1
            if hy < ky:
                _deflate(Yh, Uv[h], Qv[h])
    return (
        np.ascontiguousarray(Wt[:hx].T),
        np.ascontiguousarray(Pt[:hx].T),
        np.ascontiguousarray(Tt[:hx].T),
        np.ascontiguousarray(Vt[:hy].T),
        np.ascontiguousarray(Qt[:hy].T),
        np.ascontiguousarray(Ut[:hy].T),
        hx,
        hy,
    )
