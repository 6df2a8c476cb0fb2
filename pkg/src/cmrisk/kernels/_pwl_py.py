"""NumPy implementation of the piecewise-linear conditional MGF kernel.

For each outer node ``y`` the kernel returns

    log E[exp((K x + gamma(y + psi x))^2 / lam)],   x ~ N(m(y), s^2),

where ``gamma`` is continuous piecewise linear.  On each piece the action is
affine in ``x`` and the integral has a closed form in terms of the normal CDF
(concave exponent) or Dawson's function (convex exponent on a finite piece).
"""

from __future__ import annotations

import numpy as np
from scipy.special import dawsn, log_ndtr

LOG_2PI = np.log(2.0 * np.pi)


def _log_diff_ndtr(p, q):
    """``log(Phi(q) - Phi(p))`` for ``p <= q``, stable in both tails."""
    pos = p > 0
    hi = np.where(pos, log_ndtr(-p), log_ndtr(q))
    lo = np.where(pos, log_ndtr(-q), log_ndtr(p))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = hi + np.log1p(-np.exp(lo - hi))
    return np.where(q > p, out, -np.inf)


def _log_F(t):
    """``log(exp(t^2) dawsn(t))`` for ``t >= 0`` (``-inf`` at 0)."""
    with np.errstate(divide="ignore"):
        return t * t + np.log(dawsn(t))


def _log_diff_F(ta, tb):
    """``log(F(tb) - F(ta))`` with ``F(t) = exp(t^2) dawsn(t)`` odd and increasing."""
    out = np.full(np.broadcast(ta, tb).shape, -np.inf)
    ta, tb = np.broadcast_arrays(ta, tb)
    with np.errstate(divide="ignore", invalid="ignore"):
        right = ta >= 0
        lb, la = _log_F(np.abs(tb)), _log_F(np.abs(ta))
        r = lb + np.log1p(-np.exp(la - lb))
        left = tb <= 0
        l_ = la + np.log1p(-np.exp(lb - la))
        mid = ~right & ~left
        m_ = np.logaddexp(lb, la)
    out = np.where(right, r, np.where(left, l_, m_))
    return np.where(tb > ta, out, -np.inf)


def _piece_log(ua, ub, a, e, lam):
    """Log of ``E[exp((a u + e)^2 / lam) 1{ua < u < ub}]`` for ``u ~ N(0, 1)``."""
    kappa = 1.0 - 2.0 * a * a / lam
    b = 2.0 * a * e / lam
    out = np.full(np.broadcast(ua, ub, a, e).shape, -np.inf)
    ua, ub, a, e, kappa, b = np.broadcast_arrays(ua, ub, a, e, kappa, b)
    eps = 1e-13
    pos = kappa > eps
    neg = kappa < -eps
    zer = ~pos & ~neg
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if pos.any():
            k = kappa[pos]
            u0 = b[pos] / k
            sk = np.sqrt(k)
            val = e[pos] ** 2 / (lam * k) - 0.5 * np.log(k)
            val = val + _log_diff_ndtr(sk * (ua[pos] - u0), sk * (ub[pos] - u0))
            out[pos] = val
        if neg.any():
            k = kappa[neg]
            u0 = b[neg] / k
            fin = np.isfinite(ua[neg]) & np.isfinite(ub[neg])
            c = np.sqrt(-k / 2.0)
            val = e[neg] ** 2 / (lam * k) - 0.5 * LOG_2PI + 0.5 * np.log(2.0 / -k)
            val = val + _log_diff_F(c * (ua[neg] - u0), c * (ub[neg] - u0))
            out[neg] = np.where(fin, val, np.where(ub[neg] > ua[neg], np.inf, -np.inf))
        if zer.any():
            bb, lo, hi = b[zer], ua[zer], ub[zer]
            fin = np.isfinite(lo) & np.isfinite(hi)
            base = e[zer] ** 2 / lam - 0.5 * LOG_2PI
            ab = np.abs(bb)
            top = np.where(bb >= 0, hi, -lo)
            bot = np.where(bb >= 0, lo, -hi)
            lin = ab * top + np.log1p(-np.exp(ab * (bot - top))) - np.log(ab)
            flat = np.log(hi - lo)
            val = base + np.where(ab > 0, lin, flat)
            out[zer] = np.where(fin, val, np.where(hi > lo, np.inf, -np.inf))
    return out


def log_inner(y, m, s, kk, psi, knots, values, slope_left, slope_right, lam):
    """Vector of conditional log-MGF values, one per outer node ``y``.

    Parameters
    ----------
    y, m : ndarray, shape (n,)
        Outer nodes and the conditional means of ``x`` there.
    s : float
        Conditional standard deviation of ``x`` (positive).
    kk, psi : float
        Scalar ``K`` and ``Psi``.
    knots, values : ndarray
        Piecewise-linear ``gamma`` (strictly increasing knots).
    slope_left, slope_right : float
        Tail slopes of ``gamma``.
    lam : float
        Aversion parameter.
    """
    y = np.asarray(y, dtype=float)
    m = np.asarray(m, dtype=float)
    knots = np.asarray(knots, dtype=float)
    values = np.asarray(values, dtype=float)
    inner = np.diff(values) / np.diff(knots)
    sig = np.concatenate([[slope_left], inner, [slope_right]])
    z_anchor = np.concatenate([[knots[0]], knots[:-1], [knots[-1]]])
    g_anchor = np.concatenate([[values[0]], values[:-1], [values[-1]]])
    yc = y[:, None]
    alpha = kk + sig * psi
    c = g_anchor + sig * (yc - z_anchor)
    a = alpha * s
    e = alpha * m[:, None] + c
    if psi == 0.0:
        # a single piece: z = y does not move with x
        idx = np.clip(np.searchsorted(knots, y, side="right"), 0, len(knots))
        rows = np.arange(y.size)
        inf = np.full(y.size, np.inf)
        return _piece_log(-inf, inf, a[rows, idx], e[rows, idx], lam)
    zb = np.concatenate([[-np.inf], knots, [np.inf]])
    with np.errstate(invalid="ignore"):
        xb = (zb[None, :] - yc) / psi
    ub = (xb - m[:, None]) / s
    lo = np.minimum(ub[:, :-1], ub[:, 1:])
    hi = np.maximum(ub[:, :-1], ub[:, 1:])
    logs = _piece_log(lo, hi, a, e, lam)
    top = np.max(logs, axis=1)
    out = np.full(y.size, np.inf)
    fin = np.isfinite(top)
    with np.errstate(invalid="ignore"):
        out[fin] = top[fin] + np.log(np.sum(np.exp(logs[fin] - top[fin, None]), axis=1))
    out[top == -np.inf] = -np.inf
    return out
