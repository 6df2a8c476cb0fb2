"""Adaptation across aversion levels in the normalized scalar problem.

Setting: ``I0 = 1``, ``Psi = -1``, ``K = 1`` and ``M = infinity``; rules are
``delta = X + gamma(Z)`` and the benchmark at each ``lam`` is the best linear
rule, which is optimal there.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize

from .dual import infinite_m_risk
from .experiment import LimitExperimentConfig
from .optimal import optimize_linear
from .quadrature import IntegratorSettings
from .rules import RuleSpec
from .solvers import golden_section

TAU_RANGE = (1e-3, 10.0)


class AdaptiveError(ValueError):
    """Invalid input to an adaptive computation."""


@dataclass(frozen=True)
class LambdaGrid:
    """Points evenly spaced in ``log(lam)``."""

    log_lambda_min: float = -3.0
    log_lambda_max: float = 6.0
    n_points: int = 37

    def __post_init__(self):
        if self.n_points < 1:
            raise AdaptiveError("n_points must be >= 1")
        if self.n_points > 1 and not self.log_lambda_max > self.log_lambda_min:
            raise AdaptiveError("log_lambda_max must exceed log_lambda_min")

    @property
    def log_values(self) -> np.ndarray:
        if self.n_points == 1:
            return np.array([float(self.log_lambda_min)])
        return np.linspace(self.log_lambda_min, self.log_lambda_max, self.n_points)

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    @classmethod
    def single(cls, lam: float) -> "LambdaGrid":
        return cls(float(np.log(lam)), float(np.log(lam)), 1)


@dataclass
class AdaptiveReport:
    """Per-``lam`` risks of a rule against the pointwise optimum.

    ``regret`` is the largest finite ratio; ``all_finite`` records whether the
    rule has finite risk on the whole grid.
    """

    grid: LambdaGrid
    risk_rule: np.ndarray
    risk_opt: np.ndarray
    ratio: np.ndarray
    regret: float
    argmax_lambda: float
    rule: RuleSpec | None = None
    all_finite: bool = True
    info: dict = field(default_factory=dict)

    @property
    def worst_case_regret(self) -> float:
        """Regret counting infinite ratios (the quantity tuning minimizes)."""
        return self.regret if self.all_finite else np.inf

    def subgrid_regret(self, log_lo: float, log_hi: float) -> float:
        lv = self.grid.log_values
        sel = (lv >= log_lo - 1e-12) & (lv <= log_hi + 1e-12)
        r = self.ratio[sel]
        return float(np.max(r)) if r.size else np.nan


def _normalized(omega: float, lam: float) -> LimitExperimentConfig:
    if not omega > 1.0:
        raise AdaptiveError(f"omega must exceed 1 (Var(Z) = omega - 1 must be positive), got {omega}")
    return LimitExperimentConfig.normalized(omega, lam)


def pointwise_optimal_risk(omega: float, lam: float) -> float:
    """Minimax risk at a single ``lam``: the best linear rule's M = infinity risk."""
    return optimize_linear(_normalized(omega, lam)).r_star


@lru_cache(maxsize=64)
def _opt_curve(omega: float, grid: LambdaGrid) -> np.ndarray:
    out = np.array([pointwise_optimal_risk(omega, lam) for lam in grid.values])
    out.setflags(write=False)
    return out


def optimal_curve(omega: float, grid: LambdaGrid) -> np.ndarray:
    return np.array(_opt_curve(float(omega), grid))


def rule_risks(rule: RuleSpec, omega: float, grid: LambdaGrid, integrator: IntegratorSettings | None = None):
    integrator = integrator or IntegratorSettings()
    return np.array(
        [infinite_m_risk(_normalized(omega, lam), rule, integrator=integrator).value for lam in grid.values]
    )


def rule_risk_curve(
    rule: RuleSpec,
    omega: float,
    grid: LambdaGrid | None = None,
    integrator: IntegratorSettings | None = None,
) -> AdaptiveReport:
    """Risk, pointwise optimum and ratio of ``rule`` across the grid."""
    grid = grid or LambdaGrid()
    risk = rule_risks(rule, omega, grid, integrator)
    opt = optimal_curve(omega, grid)
    with np.errstate(invalid="ignore"):
        ratio = np.where(np.isfinite(risk), risk / opt, np.inf)
    finite = np.isfinite(ratio)
    if finite.any():
        i = int(np.argmax(np.where(finite, ratio, -np.inf)))
        regret, arg = float(ratio[i]), float(grid.values[i])
    else:
        regret, arg = np.inf, np.nan
    return AdaptiveReport(grid, risk, opt, ratio, regret, arg, rule, bool(finite.all()))


def _family_rule(family: str, tau: float) -> RuleSpec:
    if family in ("st", "soft_threshold", "soft-threshold"):
        return RuleSpec.soft_threshold(tau)
    if family == "erm":
        return RuleSpec.erm(tau)
    raise AdaptiveError(f"family must be soft_threshold or erm, got {family!r}")


def tune_threshold(
    family: str,
    omega: float,
    grid: LambdaGrid | None = None,
    integrator: IntegratorSettings | None = None,
    tau_range: tuple[float, float] = TAU_RANGE,
    scan_points: int = 15,
    tol: float = 1e-4,
):
    """Choose ``tau`` minimizing adaptive regret.

    A coarse scan in ``log(tau)`` locates the basin; golden-section search on
    the neighbouring bracket refines it.

    Returns
    -------
    tau_star : float
    report : AdaptiveReport
    """
    grid = grid or LambdaGrid()
    _normalized(omega, 1.0)
    cache: dict[float, float] = {}

    def regret_of(logtau: float) -> float:
        key = round(float(logtau), 14)
        if key not in cache:
            rep = rule_risk_curve(_family_rule(family, np.exp(logtau)), omega, grid, integrator)
            cache[key] = rep.worst_case_regret
        return cache[key]

    lo, hi = np.log(tau_range[0]), np.log(tau_range[1])
    scan = np.linspace(lo, hi, scan_points)
    vals = np.array([regret_of(t) for t in scan])
    i = int(np.argmin(vals))
    a, b = scan[max(i - 1, 0)], scan[min(i + 1, scan_points - 1)]
    logtau, _ = golden_section(regret_of, a, b, tol=tol)
    tau = float(np.exp(logtau))
    return tau, rule_risk_curve(_family_rule(family, tau), omega, grid, integrator)


def spline_knots(omega: float, n_knots: int = 11) -> np.ndarray:
    width = 4.0 * np.sqrt(omega - 1.0)
    return np.linspace(-width, width, n_knots)


def optimize_spline(
    omega: float,
    grid: LambdaGrid | None = None,
    n_knots: int = 11,
    integrator: IntegratorSettings | None = None,
    start: RuleSpec | None = None,
    symmetric: bool = False,
    max_iter: int = 200,
):
    """Piecewise-linear ``gamma`` minimizing the adaptive regret.

    Solves ``min t`` subject to ``R_lam(gamma) / R*_lam <= t`` on the grid with
    SLSQP over the knot values.  Each ratio is convex in the values, so the
    epigraph problem is convex.  The result is antisymmetrized, which cannot
    raise any ratio because the problem is invariant under ``z -> -z``.

    Parameters
    ----------
    symmetric : bool
        Optimize directly over antisymmetric splines (half the unknowns).

    Returns
    -------
    rule : RuleSpec
    report : AdaptiveReport
    """
    grid = grid or LambdaGrid()
    _normalized(omega, 1.0)
    if n_knots < 2:
        raise AdaptiveError("n_knots must be >= 2")
    knots = spline_knots(omega, n_knots)
    opt = optimal_curve(omega, grid)
    if start is None:
        tau0, _ = tune_threshold("soft_threshold", omega, grid, integrator, scan_points=9, tol=1e-2)
        start = RuleSpec.soft_threshold(tau0)
    v0 = np.asarray(start.gamma(knots[:, None]))[:, 0]

    pos = knots > 0

    def expand(u):
        if not symmetric:
            return u
        v = np.zeros(n_knots)
        v[pos] = u
        v[knots < 0] = -u[::-1]
        return v

    u0 = v0[pos] if symmetric else v0

    def ratios(u):
        rule = RuleSpec.spline(knots, expand(u))
        r = rule_risks(rule, omega, grid, integrator)
        return np.where(np.isfinite(r), r / opt, 1e6)

    r0 = ratios(u0)
    x0 = np.concatenate([u0, [r0.max()]])
    cons = [{"type": "ineq", "fun": lambda x: x[-1] - ratios(x[:-1])}]
    res = minimize(lambda x: x[-1], x0, jac=lambda x: np.eye(x.size)[-1], constraints=cons,
                   method="SLSQP", options={"maxiter": max_iter, "ftol": 1e-10})
    cand = res.x[:-1]
    best = cand if ratios(cand).max() <= r0.max() else u0
    values = expand(best)
    if not symmetric:
        sym = 0.5 * (values - values[::-1])
        if ratios(sym).max() <= ratios(values).max() + 1e-12:
            values = sym
    rule = RuleSpec.spline(knots, values)
    report = rule_risk_curve(rule, omega, grid, integrator)
    report.info.update({"status": "converged" if res.success else "max_iterations", "message": res.message,
                        "iterations": int(res.nit)})
    return rule, report


def _fmt(x: float) -> str:
    if np.isposinf(x):
        return "inf"
    if np.isneginf(x):
        return "-inf"
    if np.isnan(x):
        return "nan"
    return format(float(x), ".17g")


def write_curve_csv(report: AdaptiveReport, path) -> None:
    """CSV with columns ``lambda, log_lambda, risk_rule, risk_opt, ratio``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "log_lambda", "risk_rule", "risk_opt", "ratio"])
        for lam, llam, r, o, q in zip(report.grid.values, report.grid.log_values, report.risk_rule,
                                      report.risk_opt, report.ratio):
            w.writerow([_fmt(lam), _fmt(llam), _fmt(r), _fmt(o), _fmt(q)])
