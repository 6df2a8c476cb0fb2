"""Convex minimization helpers: damped Newton and golden-section search."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

CONVERGED = "converged"
DIVERGED = "diverged_to_infinity"
MAX_ITER = "max_iterations"


@dataclass
class NewtonResult:
    x: np.ndarray
    value: float
    gradient_norm: float
    iterations: int
    status: str


def _solve_pd(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Newton direction with Levenberg damping when ``H`` is not safely PD."""
    n = H.shape[0]
    H = 0.5 * (H + H.T)
    scale = max(1.0, float(np.max(np.abs(np.diag(H)))) if n else 1.0)
    mu = 0.0
    for _ in range(60):
        try:
            L = np.linalg.cholesky(H + mu * np.eye(n))
            return -np.linalg.solve(L.T, np.linalg.solve(L, g))
        except np.linalg.LinAlgError:
            mu = 1e-10 * scale if mu == 0.0 else 10.0 * mu
    return -g


def beta_minimize(
    objective: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]],
    beta0,
    *,
    tol: float = 1e-8,
    max_iter: int = 100,
    nonneg: bool = False,
    value_only: Callable[[np.ndarray], float] | None = None,
) -> NewtonResult:
    """Minimize a smooth convex extended-real function by damped Newton.

    Parameters
    ----------
    objective : callable
        ``objective(beta) -> (f, grad, hess)``; ``f`` may be ``inf`` outside the
        effective domain, in which case ``grad``/``hess`` are ignored.
    beta0 : array_like
        Start point.
    tol : float
        Stop when the (projected) gradient norm is at most ``tol``.
    nonneg : bool
        Restrict to ``beta >= 0`` by projected Newton on the free variables.
    value_only : callable, optional
        Cheaper ``beta -> f`` for the line search.

    Returns
    -------
    NewtonResult
    """
    beta = np.asarray(beta0, dtype=float).copy()
    if nonneg:
        beta = np.maximum(beta, 0.0)
    fval = value_only or (lambda b: objective(b)[0])
    f, g, H = objective(beta)
    if not np.isfinite(f):
        return NewtonResult(beta, np.inf, np.inf, 0, DIVERGED)
    it = 0
    for it in range(1, max_iter + 1):
        if nonneg:
            free = (beta > 0) | (g < 0)
            pg = np.where(free, g, 0.0)
        else:
            free = np.ones(beta.shape, dtype=bool)
            pg = g
        gnorm = float(np.linalg.norm(pg))
        if gnorm <= tol:
            return NewtonResult(beta, f, gnorm, it - 1, CONVERGED)
        step = np.zeros_like(beta)
        idx = np.flatnonzero(free)
        step[idx] = _solve_pd(H[np.ix_(idx, idx)], g[idx])
        slope = float(g @ step)
        if slope >= 0:
            step = -pg
            slope = -gnorm**2
        t = 1.0
        accepted = False
        for _ in range(60):
            cand = beta + t * step
            if nonneg:
                cand = np.maximum(cand, 0.0)
            fc = fval(cand)
            decrease = float(g @ (cand - beta))
            if np.isfinite(fc) and fc <= f + 1e-4 * min(decrease, 0.0) + 1e-15 * abs(f):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            gn = float(np.linalg.norm(pg))
            status = CONVERGED if gn <= max(tol, 1e-6) else MAX_ITER
            return NewtonResult(beta, f, gn, it, status)
        beta = cand
        f, g, H = objective(beta)
    pg = np.where((beta > 0) | (g < 0), g, 0.0) if nonneg else g
    gnorm = float(np.linalg.norm(pg))
    return NewtonResult(beta, f, gnorm, it, CONVERGED if gnorm <= tol else MAX_ITER)


def golden_section(f: Callable[[float], float], a: float, b: float, tol: float = 1e-8, max_iter: int = 200):
    """Minimize a unimodal scalar function on ``[a, b]``.

    Returns ``(x_min, f_min)``.  Infinite values are allowed and treated as
    larger than every finite value.
    """
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    if fc <= fd:
        return c, fc
    return d, fd
