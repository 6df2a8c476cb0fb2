"""Reference computations that share no code with the package.

Each oracle uses a different numerical route from the implementation it
checks: recursion instead of pairings, adaptive quadrature instead of
Gauss-Hermite, dense grids instead of Newton, plain sampling instead of
nodes.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import logsumexp


# -- Gaussian moments via Stein's identity E[xi_i f(xi)] = sum_j Omega_ij E[d_j f(xi)]


def stein_moment(omega, m) -> float:
    omega = np.asarray(omega, dtype=float)
    k = omega.shape[0]

    @lru_cache(maxsize=None)
    def rec(m):
        if sum(m) == 0:
            return 1.0
        if sum(m) % 2:
            return 0.0
        i = next(s for s, e in enumerate(m) if e > 0)
        base = list(m)
        base[i] -= 1
        total = 0.0
        for j in range(k):
            if base[j] > 0:
                nxt = list(base)
                nxt[j] -= 1
                total += omega[i, j] * base[j] * rec(tuple(nxt))
        return total

    return rec(tuple(int(e) for e in m))


def brute_multi_indices(k: int, M: int):
    """All multi-indices with 1 <= |m| <= M, by nested enumeration."""
    import itertools

    return [m for m in itertools.product(range(M + 1), repeat=k) if 1 <= sum(m) <= M]


# -- finite state spaces


def simplex_grid_primal_3atom(q, L, phi_row, lam, step=1e-3):
    """Dense grid over the 2-simplex restricted to ``sum p_i phi_i = 0`` (scalar phi)."""
    q = np.asarray(q, float)
    L = np.asarray(L, float)
    phi = np.asarray(phi_row, float)
    best = -np.inf
    n = int(round(1 / step))
    for i in range(n + 1):
        p1 = i * step
        ps = np.array([[p1, j * step, 1 - p1 - j * step] for j in range(n + 1 - i)])
        ok = np.abs(ps @ phi) <= 1e-12
        ps = ps[ok]
        if ps.size == 0:
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            kl = np.where(ps > 0, ps * np.log(ps / q), 0.0).sum(1)
        best = max(best, float(np.max(ps @ L - lam * kl)))
    return best


def random_feasible_p_value(q, L, phi, lam, rng, trials=2000):
    """Objective at random feasible distributions (a lower bound on the primal)."""
    from scipy.optimize import linprog

    n = q.size
    vals = []
    for _ in range(trials):
        c = rng.standard_normal(n)
        res = linprog(c, A_eq=np.vstack([phi.T, np.ones((1, n))]),
                      b_eq=np.concatenate([np.zeros(phi.shape[1]), [1.0]]), bounds=[(0, None)] * n,
                      method="highs")
        if res.status != 0:
            continue
        p = 0.5 * res.x + 0.5 * q if np.allclose(phi.T @ q, 0) else res.x
        with np.errstate(divide="ignore", invalid="ignore"):
            kl = np.sum(np.where(p > 0, p * np.log(p / q), 0.0))
        vals.append(p @ L - lam * kl)
    return max(vals) if vals else -np.inf


def log_mgf_dual_bruteforce(q, L, phi, lam, span=20.0, n=4001):
    """1-D dual by dense grid over beta (b = 1)."""
    betas = np.linspace(-span, span, n)
    vals = [lam * logsumexp(np.log(q) + L / lam - b * phi[:, 0]) for b in betas]
    return float(np.min(vals))


# -- scalar limit experiment, normalized (I0 = 1, Psi = -1, K = 1)


def nested_quad_risk(omega, lam, gamma, zmax=11.0, n_inner=40_001):
    """``lam E_Y log E[exp(delta^2/lam) | Y]``: adaptive outer quadrature, dense inner trapezoid.

    Uses ``delta = X + gamma(Y - X)``; ``X | Y ~ N(Y/omega, 1 - 1/omega)``.
    """
    s = np.sqrt(1.0 - 1.0 / omega)
    sd_y = np.sqrt(omega)
    u = np.linspace(-zmax - 4.0, zmax + 4.0, n_inner)
    log_du = np.log(u[1] - u[0]) - 0.5 * np.log(2 * np.pi)

    def inner(y):
        x = y / omega + s * u
        return logsumexp((x + gamma(y - x)) ** 2 / lam - 0.5 * u * u) + log_du

    def outer(t):
        return inner(sd_y * t) * np.exp(-0.5 * t * t) / np.sqrt(2 * np.pi)

    val, _ = integrate.quad(outer, -zmax, zmax, limit=400, epsabs=0, epsrel=1e-9)
    return lam * val


def closed_form_zero_rule(omega, lam):
    """Rule ``delta = X``: log-MGF of a noncentral chi-square, averaged over Y."""
    s2 = 1.0 - 1.0 / omega
    if 2 * s2 >= lam:
        return np.inf
    a = 1.0 / lam
    var_m = 1.0 / omega  # Var(E[X|Y]) = omega / omega^2
    return lam * (-0.5 * np.log(1 - 2 * a * s2) + a * var_m / (1 - 2 * a * s2))


def mc_limit_draws(omega, n, seed):
    """Plain draws of (X, Y) from the normalized experiment at h = 0."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    z = np.sqrt(omega - 1.0) * rng.standard_normal(n)
    return x, z + x  # Y = Z - Psi X = Z + X


def dense_bayes_action(omega, lam, x, y, hstep=1e-3, astep=1e-4):
    """Flat-prior Bayes action under tilted squared loss on a dense h-grid (beta = 0)."""
    cov = np.array([[1.0, 1.0], [1.0, omega]])
    prec = np.linalg.inv(cov)
    hs = np.arange(x - 10.0, x + 10.0, hstep)
    r = np.stack([x - hs, y - hs], axis=1)  # mean of (X, Y) is (h, h)
    logpost = -0.5 * np.einsum("ni,ij,nj->n", r, prec, r)
    logpost -= logsumexp(logpost)
    a_grid = np.arange(x - 2.0, x + 2.0, astep)
    vals = np.array([logsumexp(logpost + (a - hs) ** 2 / lam) for a in a_grid])
    return float(a_grid[np.argmin(vals)])


# -- treatment example


def sample_limit_ate_delta(n, seed, sigma2=(0.25, 0.25)):
    """Draws of K X for the treatment limit experiment (rule zero)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2)) * np.sqrt(2.0 * np.asarray(sigma2))
    return x[:, 1] - x[:, 0]


def finite_m_dense(omega, lam, gamma, M, zmax=14.0, n_outer=6001, n_inner=20_001):
    """Finite-M dual for the normalized scalar problem with dense grids and BFGS.

    Moments of ``y`` are centered with the closed-form Gaussian values
    ``omega^(j/2) (j-1)!!`` for even ``j``.
    """
    from scipy.optimize import minimize

    s = np.sqrt(1.0 - 1.0 / omega)
    sd = np.sqrt(omega)
    u = np.linspace(-zmax - 4.0, zmax + 4.0, n_inner)
    log_du = np.log(u[1] - u[0]) - 0.5 * np.log(2 * np.pi)
    t = np.linspace(-zmax, zmax, n_outer)
    y = sd * t
    inner = np.empty_like(y)
    for i, yi in enumerate(y):
        x = yi / omega + s * u
        inner[i] = logsumexp((x + gamma(yi - x)) ** 2 / lam - 0.5 * u * u) + log_du
    base = inner - 0.5 * t * t + np.log(t[1] - t[0]) - 0.5 * np.log(2 * np.pi)
    if M == 0:
        return lam * float(logsumexp(base))

    def dfact(j):
        return float(np.prod(np.arange(j - 1, 0, -2))) if j > 0 else 1.0

    W = np.stack([y**j - (omega ** (j / 2) * dfact(j) if j % 2 == 0 else 0.0) for j in range(1, M + 1)], axis=1)
    scale = W.std(0)

    def f(b):
        e = base + (W / scale) @ b
        lg = logsumexp(e)
        p = np.exp(e - lg)
        return lg, p @ (W / scale)

    start = np.zeros(M)
    if M >= 2:
        start[1] = -1.0
    while not np.isfinite(f(start)[0]) or f(start)[0] > 50:
        start[1] *= 2
    res = minimize(f, start, jac=True, method="BFGS", options={"gtol": 1e-11, "maxiter": 5000})
    return lam * float(res.fun)
