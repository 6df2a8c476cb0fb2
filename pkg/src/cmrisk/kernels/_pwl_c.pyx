# cython: language_level=3
"""Compiled piecewise-linear conditional MGF kernel (see ``_pwl_py``)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, exp, fabs, isfinite, log, log1p, sqrt
from scipy.special.cython_special cimport dawsn, log_ndtr

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453
cdef double KAPPA_EPS = 1e-13


cdef inline double _logaddexp(double a, double b) nogil:
    cdef double mx
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    mx = a if a > b else b
    return mx + log1p(exp(-fabs(a - b)))


cdef inline double _log_diff_ndtr(double p, double q) nogil:
    cdef double hi, lo
    if not q > p:
        return -INFINITY
    if p > 0:
        hi = log_ndtr(-p)
        lo = log_ndtr(-q)
    else:
        hi = log_ndtr(q)
        lo = log_ndtr(p)
    return hi + log1p(-exp(lo - hi))


cdef inline double _log_F(double t) nogil:
    if t == 0.0:
        return -INFINITY
    return t * t + log(dawsn(t))


cdef inline double _log_diff_F(double ta, double tb) nogil:
    cdef double la, lb
    if not tb > ta:
        return -INFINITY
    lb = _log_F(fabs(tb))
    la = _log_F(fabs(ta))
    if ta >= 0:
        return lb + log1p(-exp(la - lb))
    if tb <= 0:
        return la + log1p(-exp(lb - la))
    return _logaddexp(la, lb)


cdef double _piece_log(double ua, double ub, double a, double e, double lam) nogil:
    cdef double kappa = 1.0 - 2.0 * a * a / lam
    cdef double b = 2.0 * a * e / lam
    cdef double u0, sk, c, ab, top, bot
    if not ub > ua:
        return -INFINITY
    if kappa > KAPPA_EPS:
        u0 = b / kappa
        sk = sqrt(kappa)
        return e * e / (lam * kappa) - 0.5 * log(kappa) + _log_diff_ndtr(sk * (ua - u0), sk * (ub - u0))
    if not (isfinite(ua) and isfinite(ub)):
        return INFINITY
    if kappa < -KAPPA_EPS:
        u0 = b / kappa
        c = sqrt(-kappa / 2.0)
        return (e * e / (lam * kappa) - 0.5 * LOG_2PI + 0.5 * log(2.0 / -kappa)
                + _log_diff_F(c * (ua - u0), c * (ub - u0)))
    ab = fabs(b)
    if ab == 0.0:
        return e * e / lam - 0.5 * LOG_2PI + log(ub - ua)
    if b >= 0:
        top = ub
        bot = ua
    else:
        top = -ua
        bot = -ub
    return e * e / lam - 0.5 * LOG_2PI + ab * top + log1p(-exp(ab * (bot - top))) - log(ab)


def log_inner(y, m, double s, double kk, double psi, knots, values,
              double slope_left, double slope_right, double lam):
    """Compiled counterpart of ``cmrisk.kernels._pwl_py.log_inner``."""
    yv = np.ascontiguousarray(y, dtype=np.float64)
    mv = np.ascontiguousarray(m, dtype=np.float64)
    zk = np.ascontiguousarray(knots, dtype=np.float64)
    gk = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0], nk = zk.shape[0], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[:] o = out
    cdef const double[:] yy = yv
    cdef const double[:] mm = mv
    cdef const double[:] z = zk
    cdef const double[:] g = gk
    cdef double yi, mi, sig, za, ga, alpha, a, e, xa, xb, ua, ub, tmp, acc, piece, zlo, zhi
    with nogil:
        for i in range(n):
            yi = yy[i]
            mi = mm[i]
            if psi == 0.0:
                # one piece; locate y among the knots
                j = 0
                while j < nk and z[j] <= yi:
                    j += 1
                if j == 0:
                    sig = slope_left
                    za = z[0]
                    ga = g[0]
                elif j == nk:
                    sig = slope_right
                    za = z[nk - 1]
                    ga = g[nk - 1]
                else:
                    sig = (g[j] - g[j - 1]) / (z[j] - z[j - 1])
                    za = z[j - 1]
                    ga = g[j - 1]
                alpha = kk + sig * psi
                o[i] = _piece_log(-INFINITY, INFINITY, alpha * s, alpha * mi + ga + sig * (yi - za), lam)
                continue
            acc = -INFINITY
            for j in range(nk + 1):
                if j == 0:
                    sig = slope_left
                    za = z[0]
                    ga = g[0]
                    zlo = -INFINITY
                    zhi = z[0]
                elif j == nk:
                    sig = slope_right
                    za = z[nk - 1]
                    ga = g[nk - 1]
                    zlo = z[nk - 1]
                    zhi = INFINITY
                else:
                    sig = (g[j] - g[j - 1]) / (z[j] - z[j - 1])
                    za = z[j - 1]
                    ga = g[j - 1]
                    zlo = z[j - 1]
                    zhi = z[j]
                alpha = kk + sig * psi
                a = alpha * s
                e = alpha * mi + ga + sig * (yi - za)
                xa = (zlo - yi) / psi
                xb = (zhi - yi) / psi
                ua = (xa - mi) / s
                ub = (xb - mi) / s
                if ua > ub:
                    tmp = ua
                    ua = ub
                    ub = tmp
                piece = _piece_log(ua, ub, a, e, lam)
                if piece == INFINITY:
                    acc = INFINITY
                    break
                acc = _logaddexp(acc, piece)
            o[i] = acc
    return out
