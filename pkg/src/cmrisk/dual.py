"""Constrained multiplier risk: finite-M dual, M = infinity risk, finite-space oracle.

Sign conventions
----------------
* Gaussian limit problem: the dual objective is
  ``lam * log E_Q[exp(l(delta - K h) / lam + beta' W)]``.  With
  ``nonneg_beta`` the search is over ``beta >= 0``, which is the dual of the
  inequality constraints ``E_P[W] >= 0``.
* Finite state spaces: the tilted family is ``p ~ q exp(L / lam - beta' phi)``.
  The inequality variant constrains ``E_P[phi] <= 0`` and restricts ``beta >= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.optimize import linprog, minimize, root
from scipy.special import logsumexp

from . import kernels
from .experiment import LimitExperimentConfig, conditional_x_given_y, joint_covariance
from .moments import MomentVectorSpec, build_moment_spec, w_vector
from .quadrature import IntegratorSettings, gaussian_nodes, gh_standard, low_rank_factor, standard_nodes
from .rules import LossSpec, RuleSpec
from .solvers import CONVERGED, DIVERGED, MAX_ITER, beta_minimize

OVERFLOW_EXPONENT = 700.0
_ND_MARGIN = 1e-9


@dataclass
class RiskReport:
    """Extended-real risk with solver diagnostics."""

    value: float
    beta_star: np.ndarray | None = None
    iterations: int = 0
    gradient_norm: float = 0.0
    status: str = CONVERGED
    method: str = ""
    info: dict = field(default_factory=dict)

    @property
    def is_finite(self) -> bool:
        return bool(np.isfinite(self.value))

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "beta_star": None if self.beta_star is None else np.asarray(self.beta_star).tolist(),
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "status": self.status,
            "method": self.method,
        }


def _diverged(method: str, **info) -> RiskReport:
    return RiskReport(np.inf, None, 0, np.inf, DIVERGED, method, info)


def mgf_squared_gaussian(mean: float, var: float, a: float) -> float:
    """``E[exp(a U^2)]`` for ``U ~ N(mean, var)``; ``inf`` when ``2 a var >= 1``."""
    if var < 0:
        raise ValueError("var must be nonnegative")
    r = 1.0 - 2.0 * a * var
    if r <= 0:
        return np.inf
    with np.errstate(over="ignore"):
        return float(np.exp(a * mean * mean / r) / np.sqrt(r))


# ---------------------------------------------------------------------------
# finiteness of exp(|A v|^2 / lam + beta' W(y)) against a Gaussian


def _sym_from_order2(spec: MomentVectorSpec, beta: np.ndarray) -> np.ndarray:
    k = spec.k
    B = np.zeros((k, k))
    for m, b in zip(spec.indices, beta):
        if m.sum() != 2:
            continue
        nz = np.flatnonzero(m)
        if nz.size == 1:
            B[nz[0], nz[0]] += b
        else:
            s, t = nz
            B[s, t] += 0.5 * b
            B[t, s] += 0.5 * b
    return B


def _sphere_directions(k: int, n: int = 4000) -> np.ndarray:
    if k == 1:
        return np.array([[1.0], [-1.0]])
    rng = np.random.default_rng(12345)
    u = rng.standard_normal((n, k))
    u = np.vstack([u, np.eye(k), -np.eye(k)])
    return u / np.linalg.norm(u, axis=1, keepdims=True)


@dataclass
class _DomainCheck:
    """Analytic integrability test for squared loss.

    Works in standard coordinates ``v = L xi`` of the joint Gaussian so a
    singular joint covariance needs no special handling.
    """

    quad_base: np.ndarray  # -I/2 + L'A'AL/lam
    ly: np.ndarray  # y = ly xi
    null_y: np.ndarray  # basis of {xi : ly xi = 0}
    spec: MomentVectorSpec | None
    dirs: np.ndarray | None

    @classmethod
    def build(cls, config, rule, lam, spec):
        cov = joint_covariance(config)
        L = low_rank_factor(cov)
        p = config.p
        c_inf = rule.asymptotic_c(config)
        A = np.hstack([config.k_mat + c_inf @ config.psi, c_inf])
        AL = A @ L
        base = -0.5 * np.eye(L.shape[1]) + AL.T @ AL / lam
        ly = L[p:, :]
        _, sv, vt = np.linalg.svd(ly)
        rank = int(np.sum(sv > 1e-12 * max(sv.max(initial=0.0), 1e-300)))
        null_y = vt[rank:].T
        dirs = _sphere_directions(config.k) if spec is not None and spec.M >= 3 else None
        return cls(base, ly, null_y, spec, dirs)

    def finite(self, beta=None) -> bool:
        spec = self.spec
        if spec is None or beta is None or beta.size == 0:
            return bool(np.linalg.eigvalsh(self.quad_base).max() < -_ND_MARGIN)
        orders = spec.orders
        nz = beta != 0
        top = int(orders[nz].max()) if nz.any() else 0
        if top <= 2:
            q = self.quad_base + self.ly.T @ _sym_from_order2(spec, beta) @ self.ly
            return bool(np.linalg.eigvalsh(q).max() < -_ND_MARGIN)
        if top % 2:
            return False
        sel = orders == top
        ptop = np.prod(self.dirs[:, None, :] ** spec.indices[sel][None], axis=-1) @ beta[sel]
        if ptop.max() >= 0:
            return False
        if self.null_y.shape[1] == 0:
            return True
        qx = self.null_y.T @ self.quad_base @ self.null_y
        return bool(np.linalg.eigvalsh(qx).max() < -_ND_MARGIN)


# ---------------------------------------------------------------------------
# finite-M dual


def _feature_nodes(config, rule, M, h, integrator):
    """Nodes of (K X, Z, Y + Psi h) under Q_h, reduced to the needed blocks."""
    p, k, d = config.p, config.k, config.d
    h = np.zeros(p) if h is None else np.asarray(h, dtype=float).reshape(p)
    need_z = rule.family != "zero"
    need_y = M > 0
    rows, offs, blocks = [], [], {}
    start = 0
    rows.append(np.hstack([config.k_mat, np.zeros((d, k))]))
    offs.append(np.zeros(d))
    blocks["kx"] = slice(start, start + d)
    start += d
    if need_z:
        rows.append(np.hstack([config.psi, np.eye(k)]))
        offs.append(np.zeros(k))
        blocks["z"] = slice(start, start + k)
        start += k
    if need_y:
        rows.append(np.hstack([np.zeros((k, p)), np.eye(k)]))
        offs.append(config.psi @ h)
        blocks["y"] = slice(start, start + k)
        start += k
    B = np.vstack(rows)
    mean_v = np.concatenate([h, -config.psi @ h])
    mean = B @ mean_v + np.concatenate(offs)
    cov = B @ joint_covariance(config) @ B.T
    pts, w, method = gaussian_nodes(mean, cov, integrator)
    return pts, w, method, blocks, h


_KERNEL_STEP = 0.01  # trapezoid step in standard units of y_h
_KERNEL_MAX_POINTS = 400_001


def _kernel_grid(config, half_width: float):
    """Trapezoid nodes for ``y_h ~ N(0, Omega)`` (scalar problems)."""
    cond = conditional_x_given_y(config)
    s = float(np.sqrt(cond.cond_cov[0, 0]))
    sd = float(np.sqrt(config.omega[0, 0]))
    step = _KERNEL_STEP if s == 0.0 else min(_KERNEL_STEP, 0.05 * s / sd)
    n = min(int(2 * half_width / step) + 1, _KERNEL_MAX_POINTS)
    u = np.linspace(-half_width, half_width, n | 1)
    logw = -0.5 * u * u + np.log(u[1] - u[0]) - 0.5 * np.log(2.0 * np.pi)
    logw[[0, -1]] -= np.log(2.0)
    return sd * u, logw


def _kernel_terms(config, rule, M, half_width):
    y, logw = _kernel_grid(config, half_width)
    expo = kernel_log_inner(config, rule, y)
    spec = build_moment_spec(config.omega, M) if M > 0 else None
    W = w_vector(spec, y[:, None]) if spec is not None else np.zeros((y.size, 0))
    return expo, logw, W, spec


def _use_kernel(config, rule, loss, method) -> bool:
    scalar = config.p == 1 and config.k == 1 and config.d == 1
    eligible = loss.is_squared and scalar
    if method == "kernel":
        if not (loss.is_squared and scalar):
            raise ValueError("kernel path needs squared loss and p = k = d = 1")
        return True
    if method == "nodes":
        return False
    if method != "auto":
        raise ValueError(f"unknown method {method!r}")
    return eligible


def _tilted_terms(config, rule, loss, lam, M, h, integrator):
    pts, w, method, blocks, h = _feature_nodes(config, rule, M, h, integrator)
    act = pts[:, blocks["kx"]]
    if "z" in blocks:
        act = act + rule.gamma(pts[:, blocks["z"]])
    expo = loss(act - config.k_mat @ h) / lam
    spec = build_moment_spec(config.omega, M) if M > 0 else None
    W = w_vector(spec, pts[:, blocks["y"]]) if spec is not None else np.zeros((pts.shape[0], 0))
    return expo, np.log(w), W, spec, method


def finite_m_dual_risk(
    config: LimitExperimentConfig,
    rule: RuleSpec,
    loss: LossSpec | None = None,
    M: int = 0,
    h=None,
    integrator: IntegratorSettings | None = None,
    nonneg_beta: bool = False,
    method: str = "auto",
) -> RiskReport:
    """Constrained multiplier risk with moments up to order ``M``.

    Computes ``lam * log inf_beta E_{Q_h}[exp(l(delta - K h) / lam + beta' W)]``
    by Newton's method on the log-partition in ``beta``.

    Parameters
    ----------
    config : LimitExperimentConfig
    rule : RuleSpec
    loss : LossSpec, optional
        Squared loss by default.
    M : int
        Highest moment order; ``0`` gives the unconstrained multiplier risk.
    h : array_like, optional
        Local parameter (default 0); the value does not depend on it.
    integrator : IntegratorSettings, optional
    nonneg_beta : bool
        Restrict to ``beta >= 0`` (inequality constraints ``E_P W >= 0``).
    method : {"auto", "nodes", "kernel"}
        ``"nodes"`` integrates the joint law on Gauss-Hermite or MC nodes.
        ``"kernel"`` (scalar squared-loss problems) integrates X out given
        ``y_h = Y + Psi h`` in closed form and sums over a trapezoid grid in
        ``y_h``; ``"auto"`` picks it whenever it applies, since a strongly
        tilted or kinked integrand makes tensor Gauss-Hermite converge slowly.

    Returns
    -------
    RiskReport
    """
    loss = loss or LossSpec()
    integrator = integrator or IntegratorSettings()
    if M < 0:
        raise ValueError("M must be >= 0")
    rule.validate(config)
    if _use_kernel(config, rule, loss, method):
        half = 12.0
        while True:
            rep = _finite_m_solve(config, rule, loss, M, h, integrator, nonneg_beta, half)
            if rep.info.get("edge_mass", 0.0) <= 1e-16 or half >= 200.0:
                return rep
            half *= 2.0
    return _finite_m_solve(config, rule, loss, M, h, integrator, nonneg_beta, None)


def _finite_m_solve(config, rule, loss, M, h, integrator, nonneg_beta, half_width) -> RiskReport:
    lam = config.lam
    if half_width is None:
        expo, logw, W, spec, method = _tilted_terms(config, rule, loss, lam, M, h, integrator)
    else:
        expo, logw, W, spec = _kernel_terms(config, rule, M, half_width)
        method = "kernel"
        if np.any(np.isposinf(expo)):
            return _diverged(method)
    a = expo + logw
    b = W.shape[1]
    check = _DomainCheck.build(config, rule, lam, spec) if loss.is_squared else None

    def finite(beta) -> bool:
        if check is not None:
            return check.finite(beta)
        # overflow guard for general losses
        return bool(np.max(expo + W @ beta) < OVERFLOW_EXPONENT)

    def logg(beta):
        if not finite(beta):
            return np.inf
        return float(logsumexp(a + W @ beta))

    def objective(beta):
        if not finite(beta):
            return np.inf, None, None
        e = a + W @ beta
        lg = float(logsumexp(e))
        pw = np.exp(e - lg)
        g = pw @ W
        Wc = W - g
        H = (Wc * pw[:, None]).T @ Wc
        return lg, g, H

    def edge(beta) -> dict:
        if half_width is None:
            return {}
        e = a + W @ beta
        lg = logsumexp(e)
        return {"edge_mass": float(np.exp(max(e[0], e[-1]) - lg)), "half_width": half_width}

    if b == 0:
        lg = logg(np.zeros(0))
        if not np.isfinite(lg):
            return _diverged(method)
        return RiskReport(lam * lg, None, 0, 0.0, CONVERGED, method, edge(np.zeros(0)))

    beta0 = np.zeros(b)
    if not np.isfinite(logg(beta0)):
        beta0 = _phase_one(spec, logg, nonneg_beta)
        if beta0 is None:
            return _diverged(method)

    res = beta_minimize(objective, beta0, tol=integrator.tol, max_iter=integrator.max_iter,
                        nonneg=nonneg_beta, value_only=logg)
    if spec.M >= 3 and res.status != CONVERGED:
        # retry on the face where moments of order >= 3 carry no multiplier
        face = spec.orders <= 2
        if np.any(~face):
            sub = _restricted(objective, logg, face, b)
            res2 = beta_minimize(sub[0], beta0[face], tol=integrator.tol,
                                 max_iter=integrator.max_iter, nonneg=nonneg_beta, value_only=sub[1])
            if res2.status == CONVERGED or res2.value < res.value:
                full = np.zeros(b)
                full[face] = res2.x
                res.x, res.value, res.gradient_norm = full, res2.value, res2.gradient_norm
                res.iterations += res2.iterations
                res.status = res2.status
    if not np.isfinite(res.value):
        return _diverged(method)
    return RiskReport(lam * res.value, res.x, res.iterations, res.gradient_norm, res.status, method, edge(res.x))


def _restricted(objective, logg, mask, b):
    def embed(x):
        full = np.zeros(b)
        full[mask] = x
        return full

    def obj(x):
        f, g, H = objective(embed(x))
        if g is None:
            return f, None, None
        return f, g[mask], H[np.ix_(mask, mask)]

    return obj, lambda x: logg(embed(x))


def _phase_one(spec, logg, nonneg):
    """Find a finite start by shrinking the tilt along negative squared moments."""
    if nonneg or spec.M < 2:
        return None
    direction = np.zeros(spec.b)
    for j, m in enumerate(spec.indices):
        if m.sum() == 2 and np.count_nonzero(m) == 1:
            direction[j] = -1.0
    t = 1e-3
    while t < 1e8:
        cand = t * direction
        if np.isfinite(logg(cand)):
            # step further in so Newton starts away from the boundary
            deeper = 2.0 * cand
            return deeper if np.isfinite(logg(deeper)) else cand
        t *= 1.5
    return None


# ---------------------------------------------------------------------------
# M = infinity


def linear_infinite_risk(config: LimitExperimentConfig, C) -> float:
    """Closed-form M = infinity risk of ``delta = K X + C Z`` under squared loss.

    With ``A = K + C Psi``, ``B = A S + C`` (``S`` the regression slope of X on
    Y) and ``V = Var(X | Y)``, the risk is
    ``-(lam/2) logdet(I - 2 A V A'/lam) + tr((I - 2 A V A'/lam)^{-1} B Omega B')``
    and ``inf`` once ``2 A V A' / lam`` has an eigenvalue ``>= 1``.
    """
    cond = conditional_x_given_y(config)
    C = np.atleast_2d(np.asarray(C, dtype=float)).reshape(config.d, config.k)
    lam = config.lam
    A = config.k_mat + C @ config.psi
    B = A @ cond.slope + C
    su = A @ cond.cond_cov @ A.T
    R = np.eye(config.d) - 2.0 * su / lam
    if np.linalg.eigvalsh(0.5 * (R + R.T)).min() <= 0:
        return np.inf
    _, logdet = np.linalg.slogdet(R)
    quad = np.trace(np.linalg.solve(R, B @ config.omega @ B.T))
    return float(-0.5 * lam * logdet + quad)


def _asymptotically_infinite(config, rule, lam) -> bool:
    cond = conditional_x_given_y(config)
    A = config.k_mat + rule.asymptotic_c(config) @ config.psi
    su = A @ cond.cond_cov @ A.T
    return bool(np.linalg.eigvalsh(su).max() * 2.0 / lam >= 1.0)


def infinite_m_risk(
    config: LimitExperimentConfig,
    rule: RuleSpec,
    loss: LossSpec | None = None,
    integrator: IntegratorSettings | None = None,
    method: str = "auto",
) -> RiskReport:
    """Risk when every moment of Y is pinned: ``lam E_Y[log E_{X|Y} exp(l(delta)/lam)]``.

    ``method`` is ``"auto"`` (closed form for linear rules under squared loss,
    the piecewise-linear kernel for scalar rules, nested quadrature otherwise),
    ``"closed_form"``, ``"kernel"`` or ``"quadrature"``.
    """
    loss = loss or LossSpec()
    integrator = integrator or IntegratorSettings()
    rule.validate(config)
    lam = config.lam
    if loss.is_squared and _asymptotically_infinite(config, rule, lam):
        return _diverged(method if method != "auto" else "analytic")
    scalar = config.p == 1 and config.k == 1 and config.d == 1
    if method == "auto":
        if loss.is_squared and rule.family in ("zero", "linear"):
            method = "closed_form"
        elif loss.is_squared and scalar:
            method = "kernel"
        else:
            method = "quadrature"
    if method == "closed_form":
        if not loss.is_squared or rule.family not in ("zero", "linear"):
            raise ValueError("closed form needs squared loss and a linear rule")
        value = linear_infinite_risk(config, rule.c_matrix(config))
    elif method == "kernel":
        if not (loss.is_squared and scalar):
            raise ValueError("kernel path needs squared loss and p = k = d = 1")
        value = _kernel_risk(config, rule, integrator)
    elif method == "quadrature":
        value = _nested_risk(config, rule, loss, integrator)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.isfinite(value):
        return _diverged(method)
    return RiskReport(float(value), None, 0, 0.0, CONVERGED, method)


def _outer_y_nodes(config, integrator):
    return gaussian_nodes(np.zeros(config.k), config.omega, integrator)


def kernel_log_inner(config, rule, y):
    """Conditional log-MGF at outer nodes ``y`` (scalar squared-loss problems)."""
    cond = conditional_x_given_y(config)
    s = float(np.sqrt(cond.cond_cov[0, 0]))
    slope = float(cond.slope[0, 0])
    kk, psi = float(config.k_mat[0, 0]), float(config.psi[0, 0])
    y = np.asarray(y, dtype=float).ravel()
    pw = rule.piecewise_linear()
    if s == 0.0:
        x = slope * y
        return (kk * x + pw(y + psi * x)) ** 2 / config.lam
    return kernels.log_inner(y, slope * y, s, kk, psi, pw.knots, pw.values,
                             pw.slope_left, pw.slope_right, config.lam)


def _kernel_risk(config, rule, integrator) -> float:
    t, w = gh_standard(integrator.nodes)
    keep = w > 1e-30
    y = np.sqrt(config.omega[0, 0]) * t[keep]
    li = kernel_log_inner(config, rule, y)
    if np.any(np.isinf(li) & (li > 0)):
        return np.inf
    return float(config.lam * np.dot(w[keep], li))


def _nested_risk(config, rule, loss, integrator) -> float:
    cond = conditional_x_given_y(config)
    lam = config.lam
    ys, wy, _ = _outer_y_nodes(config, integrator)
    # inner variable u = (K x, Psi x) given y, as offsets from the conditional mean
    G = np.vstack([config.k_mat, config.psi])
    inner, wi, _ = gaussian_nodes(np.zeros(G.shape[0]), G @ cond.cond_cov @ G.T, integrator)
    logwi = np.log(wi)
    d = config.d
    total = 0.0
    for y, wo in zip(ys, wy):
        mx = cond.slope @ y
        u = inner + G @ mx
        kx, psx = u[:, :d], u[:, d:]
        act = kx if rule.family == "zero" else kx + rule.gamma(psx + y)
        e = loss(act) / lam
        if np.max(e) > OVERFLOW_EXPONENT:
            return np.inf
        total += wo * float(logsumexp(e + logwi))
    return lam * total


def expected_loss(config, rule, loss=None, integrator=None) -> float:
    """``E_{Q_0}[l(delta)]``, the risk of the undistorted model."""
    loss = loss or LossSpec()
    integrator = integrator or IntegratorSettings()
    pts, w, _, blocks, _ = _feature_nodes(config, rule, 0, None, integrator)
    act = pts[:, blocks["kx"]]
    if "z" in blocks:
        act = act + rule.gamma(pts[:, blocks["z"]])
    return float(w @ loss(act))


# ---------------------------------------------------------------------------
# finite state spaces


class InfeasibleError(ValueError):
    """No distribution on the support satisfies the moment constraints."""


@dataclass(frozen=True)
class FiniteSpacePrimal:
    """Worst-case problem on finitely many atoms.

    Attributes
    ----------
    q : ndarray (n,)
        Baseline probabilities, strictly positive.
    loss_values : ndarray (n,)
    phi : ndarray (n, b)
        Moment rows; the constraint is ``sum_i p_i phi_i = 0`` (``<= 0`` when
        ``inequality``).
    lam : float
    inequality : bool
    """

    q: np.ndarray
    loss_values: np.ndarray
    phi: np.ndarray
    lam: float
    inequality: bool = False

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).ravel()
        L = np.asarray(self.loss_values, dtype=float).ravel()
        phi = np.asarray(self.phi, dtype=float)
        if phi.ndim == 1:
            phi = phi.reshape(q.size, -1) if phi.size else np.zeros((q.size, 0))
        if q.size == 0 or np.any(q <= 0):
            raise ValueError("q must be strictly positive")
        if not np.isclose(q.sum(), 1.0, rtol=0, atol=1e-9):
            raise ValueError(f"q must sum to 1, got {q.sum()}")
        if L.shape != q.shape or phi.shape[0] != q.size:
            raise ValueError("loss_values and phi must have one row per atom")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        object.__setattr__(self, "q", q / q.sum())
        object.__setattr__(self, "loss_values", L)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def b(self) -> int:
        return self.phi.shape[1]


def _support(problem: FiniteSpacePrimal, cons: np.ndarray) -> np.ndarray:
    """Atoms that carry mass in some feasible distribution (equality constraints ``cons``)."""
    n = problem.q.size
    if cons.shape[1] == 0:
        return np.ones(n, dtype=bool)
    A_eq = np.vstack([cons.T, np.ones((1, n))])
    b_eq = np.concatenate([np.zeros(cons.shape[1]), [1.0]])
    res = linprog(np.zeros(n), A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * n, method="highs")
    if res.status != 0:
        raise InfeasibleError("no distribution on the atoms satisfies the moment constraints")
    keep = np.zeros(n, dtype=bool)
    for i in range(n):
        c = np.zeros(n)
        c[i] = -1.0
        r = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * n, method="highs")
        keep[i] = r.status == 0 and -r.fun > 1e-12
    return keep


def _reduce_columns(phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop linearly dependent constraints; returns ``(phi V, V)``."""
    if phi.shape[1] == 0:
        return phi, np.zeros((0, 0))
    _, s, vt = np.linalg.svd(phi, full_matrices=False)
    r = int(np.sum(s > 1e-12 * max(s.max(initial=0.0), 1e-300)))
    V = vt[:r].T
    return phi @ V, V


def _tilt(q, L, lam, phi, beta):
    e = np.log(q) + L / lam - phi @ beta
    lz = logsumexp(e)
    return np.exp(e - lz), lz


def _solve_equality(q, L, lam, phi):
    """Primal optimum under ``E_p phi = 0`` via the tilted-family moment map."""
    keep = _support(FiniteSpacePrimal(q, L, phi, lam), phi)
    qs, Ls, ph = q[keep] / q[keep].sum(), L[keep], _reduce_columns(phi[keep])[0]
    if ph.shape[1] == 0:
        beta = np.zeros(0)
    else:
        def moments(beta):
            p, _ = _tilt(qs, Ls, lam, ph, beta)
            return p @ ph

        def jac(beta):
            p, _ = _tilt(qs, Ls, lam, ph, beta)
            m = p @ ph
            return -((ph - m) * p[:, None]).T @ (ph - m)

        sol = root(moments, np.zeros(ph.shape[1]), jac=jac, method="hybr", tol=1e-14)
        beta = sol.x
        if not np.all(np.isfinite(beta)) or np.max(np.abs(moments(beta))) > 1e-10:
            # the moment map is the negative gradient of a convex potential;
            # a trust region on the potential converges from any start
            def potential(beta):
                return float(logsumexp(np.log(qs) + Ls / lam - ph @ beta))

            opt = minimize(potential, np.zeros(ph.shape[1]), jac=lambda b: -moments(b),
                           hess=lambda b: -jac(b), method="trust-exact", options={"gtol": 1e-13})
            beta = root(moments, opt.x, jac=jac, method="hybr", tol=1e-14).x
            if not np.all(np.isfinite(beta)) or np.max(np.abs(moments(beta))) > np.max(np.abs(moments(opt.x))):
                beta = opt.x
        if np.max(np.abs(moments(beta))) > 1e-8:
            raise RuntimeError("moment map root not found; constraints may be nearly degenerate")
    p_s, _ = _tilt(qs, Ls, lam, ph, beta)
    p = np.zeros_like(q)
    p[keep] = p_s
    nz = p > 0
    kl = float(np.sum(p[nz] * (np.log(p[nz]) - np.log(q[nz]))))
    return float(p @ L - lam * kl), p


def primal_risk_finite_space(problem: FiniteSpacePrimal):
    """``sup_P E_P[L] - lam KL(P || q)`` over distributions meeting the constraints.

    Returns
    -------
    value : float
    p : ndarray
        The maximizing distribution.

    Raises
    ------
    InfeasibleError
    """
    q, L, lam, phi = problem.q, problem.loss_values, problem.lam, problem.phi
    if not problem.inequality or problem.b == 0:
        return _solve_equality(q, L, lam, phi)
    best = None
    for r in range(problem.b + 1):
        for active in combinations(range(problem.b), r):
            act = list(active)
            try:
                val, p = _solve_equality(q, L, lam, phi[:, act])
            except InfeasibleError:
                continue
            if np.all(p @ phi <= 1e-9) and (best is None or val > best[0]):
                best = (val, p)
    if best is None:
        raise InfeasibleError("no distribution on the atoms satisfies the moment inequalities")
    return best


def finite_space_dual(problem: FiniteSpacePrimal, tol: float = 1e-12) -> RiskReport:
    """``inf_beta lam log sum_i q_i exp(L_i/lam - beta' phi_i)`` by Newton."""
    q, L, lam = problem.q, problem.loss_values, problem.lam
    phi = problem.phi
    if problem.b and not problem.inequality:
        keep = _support(problem, phi)
    elif problem.b:
        # atoms that can carry mass under some feasible p (inequality form)
        n = q.size
        res = linprog(np.zeros(n), A_ub=phi.T, b_ub=np.zeros(problem.b),
                      A_eq=np.ones((1, n)), b_eq=[1.0], bounds=[(0, None)] * n, method="highs")
        if res.status != 0:
            raise InfeasibleError("no distribution on the atoms satisfies the moment inequalities")
        keep = np.ones(n, dtype=bool)
        for i in range(n):
            c = np.zeros(n)
            c[i] = -1.0
            r = linprog(c, A_ub=phi.T, b_ub=np.zeros(problem.b), A_eq=np.ones((1, n)),
                        b_eq=[1.0], bounds=[(0, None)] * n, method="highs")
            keep[i] = r.status == 0 and -r.fun > 1e-12
    else:
        keep = np.ones(q.size, dtype=bool)
    e0 = np.log(q[keep]) + L[keep] / lam
    ph = phi[keep]
    V = None
    if not problem.inequality:
        ph, V = _reduce_columns(ph)

    def objective(beta):
        e = e0 - ph @ beta
        lz = float(logsumexp(e))
        p = np.exp(e - lz)
        m = p @ ph
        return lz, -m, ((ph - m) * p[:, None]).T @ (ph - m)

    res = beta_minimize(objective, np.zeros(ph.shape[1]), tol=tol, max_iter=200,
                        nonneg=problem.inequality)
    # report beta in the original moment coordinates
    beta = V @ res.x if V is not None and problem.b else res.x
    return RiskReport(lam * res.value, beta, res.iterations, res.gradient_norm, res.status, "newton")
