"""Optimal equivariant rules under constrained multiplier risk."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize, minimize_scalar
from scipy.special import logsumexp

from .dual import RiskReport, finite_m_dual_risk, linear_infinite_risk, _DomainCheck
from .experiment import LimitExperimentConfig, conditional_x_given_y, joint_covariance
from .moments import build_moment_spec, w_vector
from .quadrature import IntegratorSettings, gaussian_nodes
from .rules import LossSpec, RuleSpec
from .solvers import CONVERGED, DIVERGED, beta_minimize, golden_section

INF_M = None  # sentinel accepted for "M = infinity"


def _is_inf_m(M) -> bool:
    return M is None or (isinstance(M, float) and np.isinf(M)) or (isinstance(M, str) and M.lower() == "inf")


def linear_rule_risk_closed_form(config: LimitExperimentConfig, C) -> float:
    """M = infinity risk of ``delta = K X + C Z`` under squared loss.

    In the scalar case with ``A = K + C Psi``, ``v = A^2 Var(X|Y)`` and
    ``mu = A * slope + C`` the value is
    ``-(lam/2) log(1 - 2v/lam) + lam mu^2 Omega / (lam - 2v)``, or ``inf``
    when ``2v >= lam``.
    """
    if config.is_scalar:
        cond = conditional_x_given_y(config)
        c = float(np.asarray(C, dtype=float).reshape(-1)[0])
        lam = config.lam
        A = config.k_mat[0, 0] + c * config.psi[0, 0]
        v = A * A * cond.cond_cov[0, 0]
        if 2.0 * v >= lam:
            return np.inf
        mu = A * cond.slope[0, 0] + c
        return float(-0.5 * lam * np.log1p(-2.0 * v / lam) + lam * mu * mu * config.omega[0, 0] / (lam - 2.0 * v))
    return linear_infinite_risk(config, C)


def gmm_projection(config: LimitExperimentConfig) -> np.ndarray:
    """``C`` with ``K + C Psi = 0`` (efficient moment-based estimate of ``K h``)."""
    oi = np.linalg.inv(config.omega)
    return -config.k_mat @ np.linalg.pinv(config.psi.T @ oi @ config.psi) @ config.psi.T @ oi


@dataclass
class LinearRiskProfile:
    c_star: np.ndarray
    r_star: float
    r_of_c: Callable[[np.ndarray], float]
    trace: list = field(default_factory=list)


def scalar_c_bracket(config: LimitExperimentConfig) -> tuple[float, float]:
    """Finiteness interval of ``C`` shrunk by 0.999 and capped at +-10."""
    cond = conditional_x_given_y(config)
    s2 = cond.cond_cov[0, 0]
    kk, psi = config.k_mat[0, 0], config.psi[0, 0]
    if psi == 0.0 or s2 == 0.0:
        return -10.0, 10.0
    centre = -kk / psi
    half = 0.999 * np.sqrt(config.lam / (2.0 * s2)) / abs(psi)
    return max(centre - half, -10.0), min(centre + half, 10.0)


def optimize_linear(config: LimitExperimentConfig, tol: float = 1e-8) -> LinearRiskProfile:
    """Minimize the M = infinity risk over linear rules ``K X + C Z``."""
    f = lambda c: linear_rule_risk_closed_form(config, c)  # noqa: E731
    if config.is_scalar:
        lo, hi = scalar_c_bracket(config)
        c, r = golden_section(f, lo, hi, tol=tol)
        return LinearRiskProfile(np.array([[c]]), float(r), f)
    c0 = gmm_projection(config)
    shape = c0.shape

    def obj(vec):
        r = f(vec.reshape(shape))
        return r if np.isfinite(r) else 1e100

    best = minimize(obj, c0.ravel(), method="BFGS", options={"gtol": 1e-10, "maxiter": 2000})
    cand = best.x
    # polish with Nelder-Mead when BFGS stalls near the domain boundary
    if not best.success:
        nm = minimize(obj, cand, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000})
        if nm.fun <= best.fun:
            cand = nm.x
    c_star = cand.reshape(shape)
    return LinearRiskProfile(c_star, f(c_star), f)


def optimal_rule(
    config: LimitExperimentConfig,
    M,
    loss: LossSpec | None = None,
    integrator: IntegratorSettings | None = None,
) -> tuple[RuleSpec, RiskReport]:
    """Optimal equivariant rule under squared loss.

    ``M`` in {0, 1}: ``delta = K X``.  ``M >= 2`` or infinite (``None``,
    ``inf`` or ``"inf"``): ``delta = K X + C* Z`` with ``C*`` minimizing the
    closed-form risk.  For finite ``M`` the report carries the dual ``beta*``
    of the optimal linear rule when the reduced integral is low-dimensional.
    """
    loss = loss or LossSpec()
    integrator = integrator or IntegratorSettings()
    if not loss.is_squared:
        raise ValueError("optimal_rule handles squared loss; use joint_optimize or bayes_rule_tilted")
    inf_m = _is_inf_m(M)
    if not inf_m and int(M) < 0:
        raise ValueError("M must be >= 0")
    if not inf_m and int(M) <= 1:
        rule = RuleSpec.zero()
        return rule, finite_m_dual_risk(config, rule, loss, int(M), integrator=integrator)
    prof = optimize_linear(config, tol=1e-8)
    if not np.isfinite(prof.r_star):
        c = gmm_projection(config)
        return RuleSpec.linear(c), RiskReport(np.inf, None, 0, np.inf, DIVERGED, "closed_form")
    rule = RuleSpec.linear(prof.c_star)
    report = RiskReport(prof.r_star, None, 0, 0.0, CONVERGED, "closed_form")
    if not inf_m:
        dual = finite_m_dual_risk(config, rule, loss, int(M), integrator=integrator)
        report.beta_star = dual.beta_star
        report.iterations = dual.iterations
        report.gradient_norm = dual.gradient_norm
        report.info["dual_value"] = dual.value
        report.info["dual_method"] = dual.method
    return rule, report


# ---------------------------------------------------------------------------
# tilted-posterior Bayes rule (p = d = 1)


class NonIntegrableTiltError(ValueError):
    """The tilted flat-prior posterior (or its expected tilted loss) diverges."""


def _log_posterior_fn(config, beta, M, x, y):
    spec = build_moment_spec(config.omega, M) if M > 0 else None
    beta = np.zeros(0) if beta is None else np.asarray(beta, dtype=float).ravel()
    if spec is not None and beta.size != spec.b:
        raise ValueError(f"beta must have length {spec.b} for M={M}")
    if spec is None and beta.size:
        raise ValueError("beta must be empty when M = 0")
    prec = np.linalg.inv(joint_covariance(config))
    psi = config.psi[:, 0]
    x = float(np.asarray(x, dtype=float).reshape(-1)[0])
    y = np.asarray(y, dtype=float).reshape(config.k)

    def logpost(h):
        h = np.asarray(h, dtype=float)
        v = np.concatenate([(x - h)[:, None], y[None, :] + h[:, None] * psi[None, :]], axis=1)
        out = -0.5 * np.einsum("ni,ij,nj->n", v, prec, v)
        if spec is not None:
            out = out + w_vector(spec, y[None, :] + h[:, None] * psi[None, :]) @ beta
        return out

    return logpost, max(2, M if spec is not None else 2)


def _leading(poly_fn, degree: int, centre: float, scale: float) -> tuple[int, float]:
    """Exact leading degree/coefficient of a polynomial given as a function."""
    n = 2 * degree + 3
    t = centre + scale * np.linspace(-1.0, 1.0, n)
    coef = np.polynomial.polynomial.polyfit((t - centre) / scale, poly_fn(t), degree)
    mag = np.max(np.abs(coef)) or 1.0
    for deg in range(degree, 0, -1):
        if abs(coef[deg]) > 1e-9 * mag:
            return deg, coef[deg] / scale**deg
    return 0, 0.0


def _posterior_grid(logpost, degree, x, n_grid):
    """Grid covering the posterior mass; raises if the posterior is improper."""
    deg, lead = _leading(logpost, degree, x, 1.0)
    if deg % 2 or lead >= 0:
        raise NonIntegrableTiltError("posterior is not integrable")
    # walk out from the mode until the log density drops by 60
    coarse = x + np.linspace(-50, 50, 2001)
    lp = logpost(coarse)
    mode = coarse[np.argmax(lp)]
    top = lp.max()

    def edge(direction):
        step = 0.5
        t = mode
        while logpost(np.array([t + direction * step]))[0] > top - 60.0:
            t += direction * step
            step *= 1.5
        return t + direction * step

    lo, hi = edge(-1.0), edge(1.0)
    grid = np.linspace(lo, hi, n_grid)
    return grid, logpost(grid)


def _argmin_convex(f, lo, hi, tol=1e-10):
    """Bounded Brent minimum with midpoint tie-breaking on flat stretches."""
    res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": tol, "maxiter": 500})
    a, fa = float(res.x), float(res.fun)
    thresh = fa + 1e-12 * max(1.0, abs(fa))
    probe = 1e-6 * max(1.0, hi - lo)
    if f(a - probe) > thresh and f(a + probe) > thresh:
        return a

    def extend(direction):
        inner, outer = a, (hi if direction > 0 else lo)
        if f(outer) <= thresh:
            return outer
        for _ in range(80):
            mid = 0.5 * (inner + outer)
            if f(mid) <= thresh:
                inner = mid
            else:
                outer = mid
        return inner

    left, right = extend(-1.0), extend(1.0)
    return 0.5 * (left + right)


def bayes_rule_tilted(
    config: LimitExperimentConfig,
    beta,
    loss: LossSpec | None = None,
    M: int = 0,
    x=0.0,
    y=None,
    n_grid: int = 4001,
) -> float:
    """Flat-prior Bayes action under the exponentially tilted likelihood.

    Minimizes ``a -> int exp(l(a - K h) / lam) pi_beta(h | x, y) dh`` where
    ``pi_beta`` is proportional to ``q_0(x - h, y + Psi h) exp(beta' W_{M,h})``.

    Raises
    ------
    NonIntegrableTiltError
        If the tilted posterior or the expected tilted loss is not integrable.
    """
    loss = loss or LossSpec()
    if config.p != 1 or config.d != 1:
        raise ValueError("bayes_rule_tilted requires p = d = 1")
    y = np.zeros(config.k) if y is None else y
    logpost, degree = _log_posterior_fn(config, beta, M, x, y)
    try:
        grid, lp = _posterior_grid(logpost, degree, float(np.asarray(x).reshape(-1)[0]), n_grid)
    except NonIntegrableTiltError:
        raise NonIntegrableTiltError(f"tilted posterior not integrable for beta={np.asarray(beta).tolist()}") from None
    kk = config.k_mat[0, 0]
    lam = config.lam
    if loss.is_squared:
        a_probe = float(kk * grid[np.argmax(lp)])
        deg, lead = _leading(lambda h: logpost(h) + (a_probe - kk * h) ** 2 / lam, degree, grid.mean(), 1.0)
        if deg % 2 or lead >= 0:
            raise NonIntegrableTiltError(
                f"expected tilted loss diverges for beta={np.asarray(beta).tolist()}"
            )
    h = grid
    dh = h[1] - h[0]
    # Simpson weights in log form
    sw = np.ones(h.size)
    sw[1:-1:2] = 4.0
    sw[2:-1:2] = 2.0
    logw = np.log(sw * dh / 3.0) + lp - lp.max()

    def logf(a):
        e = logw + loss((a - kk * h)[:, None]) / lam
        top = e.max()
        return float(top + np.log(np.exp(e - top).sum()))

    lo, hi = kk * h.min(), kk * h.max()
    if lo > hi:
        lo, hi = hi, lo
    if loss.is_squared:
        # smooth strictly convex objective: root of the derivative is exact to rounding
        def dlogf(a):
            u = a - kk * h
            e = logw + u * u / lam
            p = np.exp(e - e.max())
            return float(p @ u) / float(p.sum())

        if dlogf(lo) < 0.0 < dlogf(hi):
            return float(brentq(dlogf, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps))
    return float(_argmin_convex(logf, lo, hi))


def bayes_offset_nodes(config, beta, loss, M, z_nodes) -> np.ndarray:
    """``d_beta(z) = delta*_beta(0, z)`` so that ``delta*_beta = K x + d_beta(Z)``."""
    return np.array([bayes_rule_tilted(config, beta, loss, M, 0.0, z) for z in np.atleast_2d(z_nodes)])


@dataclass
class BayesOptimum:
    beta_star: np.ndarray
    value: float
    iterations: int
    gradient_norm: float
    status: str


def _xz_nodes(config, integrator):
    cond_z = config.invariant_covariance()
    xs, wx, _ = gaussian_nodes(np.zeros(1), config.i0_inv, integrator)
    zs, wz, _ = gaussian_nodes(np.zeros(config.k), cond_z, integrator)
    return xs[:, 0], wx, zs, wz


def bayes_risk_objective(config, M, loss=None, integrator=None):
    """``beta -> (log J(beta), grad)`` with ``J = E[l*(delta*_beta) exp(beta' W)]``.

    ``X`` and ``Z`` are independent, so the Bayes offset is needed only at the
    ``Z`` nodes.  The gradient uses the envelope identity.
    """
    loss = loss or LossSpec()
    integrator = integrator or IntegratorSettings(nodes=64)
    xs, wx, zs, wz = _xz_nodes(config, integrator)
    spec = build_moment_spec(config.omega, M)
    kk = config.k_mat[0, 0]
    psi = config.psi[:, 0]
    Y = zs[None, :, :] - xs[:, None, None] * psi[None, None, :]
    W = w_vector(spec, Y)  # (nx, nz, b)
    logw = np.log(wx)[:, None] + np.log(wz)[None, :]

    def evaluate(beta):
        beta = np.asarray(beta, dtype=float)
        try:
            dz = bayes_offset_nodes(config, beta, loss, M, zs)
        except NonIntegrableTiltError:
            return np.inf, None
        act = kk * xs[:, None] + dz[None, :]
        e = logw + loss(act[..., None]) / config.lam + W @ beta
        lj = float(logsumexp(e))
        p = np.exp(e - lj)
        return lj, np.einsum("ij,ijb->b", p, W)

    return evaluate


def bayes_beta_star(config, M, loss=None, integrator=None, beta0=None, tol=1e-7, fd_step=1e-4) -> BayesOptimum:
    """Minimize the Bayes-rule risk objective over ``beta``.

    Newton iterations use the envelope gradient and a finite-difference
    Hessian built from gradients; each evaluation warm-starts from the last.
    """
    evaluate = bayes_risk_objective(config, M, loss, integrator)
    b = build_moment_spec(config.omega, M).b
    cache: dict = {}

    def ev(beta):
        key = tuple(np.round(beta, 15))
        if key not in cache:
            cache[key] = evaluate(beta)
        return cache[key]

    def objective(beta):
        f, g = ev(beta)
        if not np.isfinite(f):
            return np.inf, None, None
        H = np.zeros((b, b))
        for j in range(b):
            e = np.zeros(b)
            e[j] = fd_step
            fp, gp = ev(beta + e)
            fm, gm = ev(beta - e)
            if gp is None or gm is None:
                gp = gp if gp is not None else g
                gm = gm if gm is not None else g
                H[:, j] = (gp - gm) / fd_step
            else:
                H[:, j] = (gp - gm) / (2 * fd_step)
        return f, g, 0.5 * (H + H.T)

    start = np.zeros(b) if beta0 is None else np.asarray(beta0, dtype=float)
    res = beta_minimize(objective, start, tol=tol, max_iter=50, value_only=lambda bb: ev(bb)[0])
    return BayesOptimum(res.x, config.lam * res.value, res.iterations, res.gradient_norm, res.status)


# ---------------------------------------------------------------------------
# joint (Gamma, beta) optimization over a linear class


Basis = Sequence[Callable[[np.ndarray], np.ndarray] | str]


def _basis_matrix(basis: Basis, z: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Feature matrix (n, J) and, when every feature is a coordinate of Z, the selector."""
    cols, sel = [], []
    for item in basis:
        if isinstance(item, str):
            if not item.startswith("z"):
                raise ValueError(f"unknown feature {item!r}")
            s = int(item[1:] or 0)
            cols.append(z[:, s])
            sel.append(s)
        else:
            cols.append(np.asarray(item(z), dtype=float).reshape(z.shape[0]))
            sel.append(None)
    if not cols:
        return np.zeros((z.shape[0], 0)), np.zeros((0, z.shape[1]))
    phi = np.stack(cols, axis=1)
    if any(s is None for s in sel):
        return phi, None
    E = np.zeros((len(sel), z.shape[1]))
    for j, s in enumerate(sel):
        E[j, s] = 1.0
    return phi, E


def joint_objective(config, M, loss=None, basis: Basis = (), integrator=None):
    """``(gamma, beta) -> (log E[exp(l(K X + Gamma phi(Z))/lam + beta' W)], grad, hess)``.

    ``gamma`` is the row-major flattening of the d x J matrix ``Gamma``.  The
    objective is jointly convex.  Returns ``(fun, sizes)``.
    """
    loss = loss or LossSpec()
    integrator = integrator or IntegratorSettings()
    p, k, d = config.p, config.k, config.d
    B = np.vstack([
        np.hstack([config.k_mat, np.zeros((d, k))]),
        np.hstack([config.psi, np.eye(k)]),
        np.hstack([np.zeros((k, p)), np.eye(k)]),
    ])
    pts, w, _ = gaussian_nodes(np.zeros(d + 2 * k), B @ joint_covariance(config) @ B.T, integrator)
    kx, z, y = pts[:, :d], pts[:, d : d + k], pts[:, d + k :]
    phi, E = _basis_matrix(basis, z)
    J = phi.shape[1]
    spec = build_moment_spec(config.omega, M) if M > 0 else None
    W = w_vector(spec, y) if spec is not None else np.zeros((pts.shape[0], 0))
    b = W.shape[1]
    logw = np.log(w)
    lam = config.lam
    ng = d * J
    check_cache: dict = {}

    def domain_ok(G, beta):
        if not loss.is_squared or E is None:
            return True
        c_inf = G @ E
        key = c_inf.tobytes()
        if key not in check_cache:
            check_cache[key] = _DomainCheck.build(config, RuleSpec.linear(c_inf), lam, spec)
        return check_cache[key].finite(beta if b else None)

    def fun(theta):
        theta = np.asarray(theta, dtype=float)
        G = theta[:ng].reshape(d, J)
        beta = theta[ng:]
        if not domain_ok(G, beta):
            return np.inf, None, None
        act = kx + phi @ G.T
        lv = loss(act) / lam
        e = logw + lv + W @ beta
        if np.max(lv + W @ beta) > 700.0:
            return np.inf, None, None
        f = float(logsumexp(e))
        pw = np.exp(e - f)
        if loss.is_squared:
            # d e_i / d Gamma[r, j] = 2 act_ir phi_ij / lam
            dG = (2.0 / lam) * (act[:, :, None] * phi[:, None, :]).reshape(act.shape[0], ng)
            D = np.hstack([dG, W])
            g = pw @ D
            Dc = D - g
            H = (Dc * pw[:, None]).T @ Dc
            Hg = (2.0 / lam) * np.kron(np.eye(d), (phi * pw[:, None]).T @ phi)
            H[:ng, :ng] += Hg
            return f, g, H
        return f, None, None

    return fun, (d, J, b)


def joint_optimize(
    config: LimitExperimentConfig,
    M: int,
    loss: LossSpec | None = None,
    basis: Basis = ("z0",),
    integrator: IntegratorSettings | None = None,
):
    """Jointly minimize over ``(Gamma, beta)`` for ``delta = K X + Gamma phi(Z)``.

    Returns
    -------
    Gamma_star : ndarray (d, J)
    beta_star : ndarray (b,)
    value : float
        ``lam * log`` of the minimized expectation (the risk).
    """
    loss = loss or LossSpec()
    integrator = integrator or IntegratorSettings()
    fun, (d, J, b) = joint_objective(config, M, loss, basis, integrator)
    theta0 = np.zeros(d * J + b)
    if loss.is_squared:
        res = beta_minimize(fun, theta0, tol=integrator.tol, max_iter=integrator.max_iter,
                            value_only=lambda t: fun(t)[0])
        theta, val = res.x, res.value
    else:
        sc = minimize(lambda t: fun(t)[0] if np.isfinite(fun(t)[0]) else 1e100, theta0,
                      method="BFGS", options={"gtol": 1e-9})
        theta, val = sc.x, sc.fun
    if not np.isfinite(val):
        return np.zeros((d, J)), np.zeros(b), np.inf
    return theta[: d * J].reshape(d, J), theta[d * J :], float(config.lam * val)
