"""Two-team treatment-effect example: simulation, plug-in rules, attainability.

Each unit has a team ``C`` (1 with probability ``pi1``, else 2), a fair-coin
treatment ``D`` and a binary outcome ``Y ~ Bernoulli(mu_D)``.  The target is
``kappa(theta) = mu1 - mu0`` and the moment function is

    psi = ((Y - mu0)(1 - D) 1{C=1}, (Y - mu1) D 1{C=1}, (D - 1/2) 1{C=1}, 1{C=1} - pi1).
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import gammaln, logsumexp

from .dual import finite_m_dual_risk, infinite_m_risk
from .experiment import LimitExperimentConfig, generator
from .moments import MomentVectorSpec, build_moment_spec, w_vector
from .quadrature import IntegratorSettings, gh_standard
from .rules import LossSpec, RuleSpec

K_ATE = np.array([[-1.0, 1.0]])

# cells of (Y, D, C) in a fixed order
CELLS = np.array([(y, d, c) for c in (1, 2) for d in (0, 1) for y in (0, 1)], dtype=float)


class AteError(ValueError):
    """Invalid treatment-effect configuration."""


@dataclass(frozen=True)
class AteConfig:
    """Base point ``(mu0, mu1)``, team share, sample size and local parameter."""

    mu0: float
    mu1: float
    pi1: float
    n: int
    h: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.n < 1:
            raise AteError("n must be >= 1")
        if not 0.0 < self.pi1 < 1.0:
            raise AteError("pi1 must lie in (0, 1)")
        object.__setattr__(self, "h", tuple(float(v) for v in np.asarray(self.h, dtype=float).reshape(2)))
        t = self.theta_nh
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise AteError(f"theta_n,h = {t.tolist()} leaves [0, 1]")

    @property
    def theta0(self) -> np.ndarray:
        return np.array([self.mu0, self.mu1], dtype=float)

    @property
    def theta_nh(self) -> np.ndarray:
        return self.theta0 + np.asarray(self.h) / np.sqrt(self.n)

    def kappa_nh(self) -> float:
        t = self.theta_nh
        return float(t[1] - t[0])


@dataclass(frozen=True)
class AteDataset:
    y: np.ndarray
    d: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if not (self.y.shape == self.d.shape == self.c.shape):
            raise AteError("y, d, c must have equal length")

    @property
    def n(self) -> int:
        return int(self.y.size)

    def counts(self) -> np.ndarray:
        """Counts of the eight ``(Y, D, C)`` cells in ``CELLS`` order."""
        idx = (self.c.astype(int) - 1) * 4 + self.d.astype(int) * 2 + self.y.astype(int)
        return np.bincount(idx, minlength=8).astype(float)


def cell_probabilities(theta, pi1: float) -> np.ndarray:
    mu = np.asarray(theta, dtype=float)
    out = np.empty(8)
    for j, (y, d, c) in enumerate(CELLS):
        pc = pi1 if c == 1 else 1.0 - pi1
        m = mu[int(d)]
        out[j] = pc * 0.5 * (m if y == 1 else 1.0 - m)
    return out


def simulate_ate(cfg: AteConfig, seed: int) -> AteDataset:
    """Draw ``n`` i.i.d. units at ``theta_n,h``; deterministic per seed."""
    rng = generator(seed)
    n = cfg.n
    c = np.where(rng.random(n) < cfg.pi1, 1, 2)
    d = (rng.random(n) < 0.5).astype(int)
    mu = cfg.theta_nh[d]
    y = (rng.random(n) < mu).astype(int)
    return AteDataset(y, d, c)


@dataclass(frozen=True)
class MleResult:
    theta: np.ndarray
    fallback: tuple[bool, bool]

    def __iter__(self):
        return iter(self.theta)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.theta, dtype=dtype)


def _mle_counts(counts: np.ndarray):
    """Pooled arm means from cell counts (batch axis first); empty arm -> 1/2."""
    counts = np.atleast_2d(counts)
    n_d = np.stack([counts[:, [0, 1, 4, 5]].sum(1), counts[:, [2, 3, 6, 7]].sum(1)], axis=1)
    s_d = np.stack([counts[:, [1, 5]].sum(1), counts[:, [3, 7]].sum(1)], axis=1)
    empty = n_d == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.where(empty, 0.5, s_d / np.where(empty, 1.0, n_d))
    return theta, empty


def mle(data: AteDataset) -> MleResult:
    """Maximum likelihood ``(mu0_hat, mu1_hat)``: pooled arm means.

    An arm with no units gets the value 1/2 and its ``fallback`` flag is set.
    """
    theta, empty = _mle_counts(data.counts())
    return MleResult(theta[0], (bool(empty[0, 0]), bool(empty[0, 1])))


def psi_eval(theta, pi1: float, unit) -> np.ndarray:
    """Moment function at one unit ``(Y, D, C)`` or an array of units (n, 3)."""
    mu0, mu1 = np.asarray(theta, dtype=float)
    u = np.asarray(unit, dtype=float)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    y, d, c = u[:, 0], u[:, 1], u[:, 2]
    team = (c == 1).astype(float)
    out = np.stack([(y - mu0) * (1 - d) * team, (y - mu1) * d * team, (d - 0.5) * team, team - pi1], axis=1)
    return out[0] if single else out


def ate_limit_matrices(mu0: float, mu1: float, pi1: float, lam: float = 1.0) -> LimitExperimentConfig:
    """Limit-experiment matrices of the treatment-effect model at ``(mu0, mu1)``."""
    for name, v in (("mu0", mu0), ("mu1", mu1), ("pi1", pi1)):
        if not 0.0 < v < 1.0:
            raise AteError(f"{name} must lie strictly inside (0, 1), got {v}")
    s0, s1 = mu0 * (1 - mu0), mu1 * (1 - mu1)
    i0 = 0.5 * np.diag([1.0 / s0, 1.0 / s1])
    psi = np.zeros((4, 2))
    psi[0, 0] = psi[1, 1] = -pi1 / 2.0
    omega = np.diag([pi1 * s0 / 2.0, pi1 * s1 / 2.0, pi1 / 4.0, pi1 * (1.0 - pi1)])
    return LimitExperimentConfig(i0, psi, omega, K_ATE, lam)


# ---------------------------------------------------------------------------
# exact moments of the scaled moment average


def _set_partitions(items: tuple):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [(first,) + part[i]] + part[i + 1 :]
        yield [(first,)] + part


@lru_cache(maxsize=None)
def _partitions_of_size(r: int) -> tuple:
    return tuple(tuple(tuple(b) for b in p) for p in _set_partitions(tuple(range(r))))


def exact_moment_targets(spec: MomentVectorSpec, theta, pi1: float, n: int) -> np.ndarray:
    """``E[prod_s Y_s^{m_s}]`` for ``Y = n^{-1/2} sum_i psi(theta, X_i)`` at the truth ``theta``.

    Uses cumulants: the joint cumulant of ``Y`` over a block ``B`` equals
    ``n^{1 - |B|/2}`` times that of one unit's ``psi``.
    """
    probs = cell_probabilities(theta, pi1)
    vals = psi_eval(theta, pi1, CELLS)
    mom_cache: dict = {}
    cum_cache: dict = {}

    def unit_moment(coords):
        key = tuple(sorted(coords))
        if key not in mom_cache:
            mom_cache[key] = float(probs @ np.prod(vals[:, list(key)], axis=1)) if key else 1.0
        return mom_cache[key]

    def unit_cumulant(coords):
        key = tuple(sorted(coords))
        if key not in cum_cache:
            total = 0.0
            for part in _partitions_of_size(len(key)):
                b = len(part)
                sign = (-1) ** (b - 1) * np.exp(gammaln(b))
                prod = 1.0
                for block in part:
                    prod *= unit_moment([key[i] for i in block])
                total += sign * prod
            cum_cache[key] = total
        return cum_cache[key]

    out = np.empty(spec.b)
    for j, m in enumerate(spec.indices):
        coords = tuple(s for s, e in enumerate(m) for _ in range(int(e)))
        total = 0.0
        for part in _partitions_of_size(len(coords)):
            prod = 1.0
            for block in part:
                prod *= n ** (1.0 - len(block) / 2.0) * unit_cumulant([coords[i] for i in block])
                if prod == 0.0:
                    break
            total += prod
        out[j] = total
    return out


# ---------------------------------------------------------------------------
# plug-in estimator


RuleLike = RuleSpec | Callable[[LimitExperimentConfig], RuleSpec]


@dataclass
class PluginEstimate:
    theta_hat: np.ndarray
    y_stat: np.ndarray
    k_hat: np.ndarray
    sigma_hat: LimitExperimentConfig | None
    kappa_hat: float
    fallback: tuple[bool, bool] = (False, False)
    clamped: bool = False


def _clip_interior(v, n):
    eps = 1.0 / (2.0 * max(n, 1))
    return float(np.clip(v, eps, 1.0 - eps))


def _psi_sums(counts, theta, pi1):
    """``sum_i psi(theta, X_i)`` from cell counts, vectorized over a leading axis."""
    counts = np.atleast_2d(counts)
    theta = np.atleast_2d(theta)
    y, d, c = CELLS[:, 0], CELLS[:, 1], CELLS[:, 2]
    team = (c == 1).astype(float)
    mu0 = theta[:, [0]]
    mu1 = theta[:, [1]]
    p1 = (y - mu0) * (1 - d) * team
    p2 = (y - mu1) * d * team
    p3 = np.broadcast_to((d - 0.5) * team, p1.shape)
    p4 = np.broadcast_to(team - pi1, p1.shape)
    return np.stack([(counts * p).sum(1) for p in (p1, p2, p3, p4)], axis=1)


def _resolve_rule(rule: RuleLike, theta_hat, pi1_hat, n, lam) -> tuple[RuleSpec, LimitExperimentConfig | None]:
    if isinstance(rule, RuleSpec):
        return rule, None
    cfg = ate_limit_matrices(_clip_interior(theta_hat[0], n), _clip_interior(theta_hat[1], n),
                             _clip_interior(pi1_hat, n), lam)
    return rule(cfg), cfg


def _gamma_at(rule: RuleSpec, y_stat: np.ndarray) -> np.ndarray:
    """``delta^c(0, y) = gamma(y)`` for each row of ``y_stat``; returns (reps,)."""
    if rule.family == "zero":
        return np.zeros(y_stat.shape[0])
    C = rule.C.reshape(1, -1)
    if C.shape[1] != y_stat.shape[1]:
        raise AteError(f"linear rule must be 1x{y_stat.shape[1]}, got {rule.C.shape}")
    return y_stat @ C[0]


def plug_in_from_counts(counts, n: int, pi1: float, rule: RuleLike, lam: float = 1.0):
    """Plug-in estimates for a batch of cell-count vectors.

    Returns ``(kappa_hat, theta_hat, y_stat, empty_flags)`` with a leading
    batch axis.
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    theta_hat, empty = _mle_counts(counts)
    y_stat = _psi_sums(counts, theta_hat, pi1) / np.sqrt(n)
    kappa = theta_hat[:, 1] - theta_hat[:, 0]
    if isinstance(rule, RuleSpec):
        g = _gamma_at(rule, y_stat)
    else:
        pi_hat = counts[:, :4].sum(1) / n
        g = np.array([
            _gamma_at(_resolve_rule(rule, th, ph, n, lam)[0], ys[None, :])[0]
            for th, ph, ys in zip(theta_hat, pi_hat, y_stat)
        ])
    raw = kappa + g / np.sqrt(n)
    return np.clip(raw, -1.0, 1.0), theta_hat, y_stat, empty


def plug_in_estimator(data: AteDataset, cfg: AteConfig, rule: RuleLike, lam: float = 1.0) -> PluginEstimate:
    """Feasible analog ``kappa(theta_hat) + n^{-1/2} gamma(n^{-1/2} sum psi(theta_hat, X_i))``.

    ``rule`` is a fixed :class:`RuleSpec` or a callable building one from the
    estimated limit matrices (evaluated at ``theta_hat`` and the sample team
    share).  The result is clamped to ``[-1, 1]``.
    """
    n = data.n
    counts = data.counts()
    theta_hat, empty = _mle_counts(counts)
    theta_hat, empty = theta_hat[0], empty[0]
    if empty.any():
        warnings.warn("an arm has no units; its mean falls back to 1/2", RuntimeWarning, stacklevel=2)
    y_stat = _psi_sums(counts, theta_hat, cfg.pi1)[0] / np.sqrt(n)
    pi_hat = counts[:4].sum() / n
    spec_rule, sigma = _resolve_rule(rule, theta_hat, pi_hat, n, lam)
    if sigma is None:
        sigma = ate_limit_matrices(_clip_interior(theta_hat[0], n), _clip_interior(theta_hat[1], n),
                                   _clip_interior(pi_hat, n), lam)
    raw = float(theta_hat[1] - theta_hat[0] + _gamma_at(spec_rule, y_stat[None, :])[0] / np.sqrt(n))
    kappa = float(np.clip(raw, -1.0, 1.0))
    return PluginEstimate(theta_hat, y_stat, K_ATE.copy(), sigma, kappa,
                          (bool(empty[0]), bool(empty[1])), kappa != raw)


# ---------------------------------------------------------------------------
# attainability


@dataclass
class AttainabilityRecord:
    n: int
    reps: int
    M: int
    lam: float
    h: tuple[float, float]
    finite_sample_value: float
    standard_error: float
    limit_value: float
    beta_star: list
    relative_gap: float
    fallback_count: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _batch_means_se(x: np.ndarray, batches: int = 20) -> float:
    nb = min(batches, x.size)
    if nb < 2:
        return np.inf
    means = np.array([b.mean() for b in np.array_split(x, nb)])
    return float(means.std(ddof=1) / np.sqrt(nb))


def limit_risk(cfg: AteConfig, rule: RuleSpec, M, lam: float, integrator: IntegratorSettings | None = None):
    lim = ate_limit_matrices(cfg.mu0, cfg.mu1, cfg.pi1, lam)
    if M is None or (isinstance(M, str) and M == "inf"):
        return infinite_m_risk(lim, rule, integrator=integrator)
    return finite_m_dual_risk(lim, rule, M=int(M), integrator=integrator)


def mc_attainability(
    cfg: AteConfig,
    rule: RuleSpec,
    M: int,
    lam: float,
    reps: int,
    seed: int,
    integrator: IntegratorSettings | None = None,
    loss: LossSpec | None = None,
) -> AttainabilityRecord:
    """Monte Carlo tilted risk of the plug-in rule next to its limit value.

    Estimates ``lam log E_{Q_n,h}[exp(l(T)/lam + beta*' W_{M,n,h})]`` with
    ``T = sqrt(n)(delta_n - kappa(theta_n,h))`` and ``beta*`` the limit
    optimum.  Replications are drawn as multinomial cell counts, which is
    equivalent in law to simulating units.
    """
    loss = loss or LossSpec()
    integrator = integrator or IntegratorSettings()
    if reps < 2:
        raise AteError("reps must be >= 2")
    lim = limit_risk(cfg, rule, M, lam, integrator)
    beta = np.zeros(0) if lim.beta_star is None else np.asarray(lim.beta_star, dtype=float)
    n = cfg.n
    theta = cfg.theta_nh
    probs = cell_probabilities(theta, cfg.pi1)
    counts = generator(seed).multinomial(n, probs, size=reps).astype(float)
    kappa_hat, _, _, empty = plug_in_from_counts(counts, n, cfg.pi1, rule, lam)
    T = np.sqrt(n) * (kappa_hat - cfg.kappa_nh())
    expo = loss(T[:, None]) / lam
    if beta.size:
        lim_cfg = ate_limit_matrices(cfg.mu0, cfg.mu1, cfg.pi1, lam)
        spec = build_moment_spec(lim_cfg.omega, int(M))
        spec = dataclasses.replace(spec, targets=exact_moment_targets(spec, theta, cfg.pi1, n))
        y_true = _psi_sums(counts, np.broadcast_to(theta, (reps, 2)), cfg.pi1) / np.sqrt(n)
        expo = expo + w_vector(spec, y_true) @ beta
    if np.max(expo) > 700.0:
        value, se = np.inf, np.inf
    else:
        top = expo.max()
        vals = np.exp(expo - top)
        mean = vals.mean()
        value = float(lam * (top + np.log(mean)))
        se = float(lam * _batch_means_se(vals) / mean)
    rel = abs(value - lim.value) / abs(lim.value) if np.isfinite(lim.value) and lim.value else np.inf
    return AttainabilityRecord(n, reps, int(M) if M is not None else -1, float(lam), tuple(cfg.h), value, se,
                               float(lim.value), beta.tolist(), float(rel), int(empty.any(axis=1).sum()))


def exact_zero_rule_risk(cfg: AteConfig, lam: float, nodes: int = 200) -> float:
    """Exact ``lam log E[exp(T^2/lam)]`` for the difference in means (M = 0).

    Uses ``exp(T^2/lam) = E_xi exp(sqrt(2/lam) xi T)`` with ``xi ~ N(0,1)``,
    binomial moment generating functions for the arm sums given the arm
    sizes, and a sum over the treated count ``n1 ~ Bin(n, 1/2)``.
    """
    n = cfg.n
    mu0, mu1 = cfg.theta_nh
    kappa = mu1 - mu0
    t, w = gh_standard(nodes)
    a = np.sqrt(2.0 / lam) * np.sqrt(n) * t  # coefficient on (mu1_hat - mu0_hat)
    n1 = np.arange(n + 1)
    logp = gammaln(n + 1) - gammaln(n1 + 1) - gammaln(n - n1 + 1) - n * np.log(2.0)

    def log_mgf(mu, size, coef):
        # log E exp(coef * S / size), S ~ Bin(size, mu); size = 0 -> fallback 1/2
        size_safe = np.where(size == 0, 1, size)
        u = coef / size_safe
        val = size * np.logaddexp(np.log1p(-mu), np.log(mu) + u)
        return np.where(size == 0, 0.5 * coef, val)

    A = a[:, None]
    l1 = log_mgf(mu1, n1[None, :], A)
    l0 = log_mgf(mu0, (n - n1)[None, :], -A)
    inner = logsumexp(l1 + l0 + logp[None, :], axis=1) - a * kappa
    return float(lam * logsumexp(inner, b=w))
