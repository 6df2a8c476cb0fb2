"""Command-line front end: ``cmrisk <command> [options]``.

Exit codes: 0 success, 2 invalid input, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .adaptive import (AdaptiveError, AdaptiveReport, LambdaGrid, optimize_spline, rule_risk_curve,
                       tune_threshold, write_curve_csv)
from .ate import AteConfig, AteError, mc_attainability
from .dual import (FiniteSpacePrimal, InfeasibleError, finite_m_dual_risk, finite_space_dual,
                   infinite_m_risk, primal_risk_finite_space)
from .experiment import ConfigError, LimitExperimentConfig, load_config
from .moments import UnsupportedOrderError
from .optimal import optimal_rule
from .quadrature import IntegratorSettings
from .rules import RuleError, RuleSpec
from .solvers import CONVERGED, DIVERGED, golden_section

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# serialization


def fmt_number(x) -> str:
    x = float(x)
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def to_json(obj) -> str:
    """Single-line JSON with floats at 17 significant digits and infinities as strings."""
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_number(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {to_json(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, np.ndarray):
        return to_json(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(to_json(v) for v in obj) + "]"
    return json.dumps(str(obj))


def _integrator(args) -> IntegratorSettings:
    try:
        return IntegratorSettings(nodes=args.nodes, mc_draws=args.mc_draws, seed=args.seed, tol=args.tol)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _manifest(args, command: str, started: float, **resolved) -> dict:
    integ = _integrator(args)
    return {
        "command": command,
        "config": resolved,
        "seed": args.seed,
        "integrator": {"nodes": integ.nodes, "mc_draws": integ.mc_draws, "seed": integ.seed, "tol": integ.tol},
        "version": __version__,
        "wall_time_s": time.perf_counter() - started,
    }


def _emit(args, payload: dict) -> None:
    text = to_json(payload) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _read_json(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(str(exc)) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _parse_m(text: str):
    if text.lower() in ("inf", "infinity"):
        return None
    try:
        m = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"M must be a nonnegative integer or 'inf', got {text!r}") from None
    if m < 0:
        raise argparse.ArgumentTypeError("M must be >= 0")
    return m


def _load_rule(text: str) -> RuleSpec:
    doc = _read_json(text) if Path(text).is_file() else None
    if doc is None:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CliError(f"rule: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise CliError("rule must be a JSON object with a 'family' key")
    return RuleSpec.from_dict(doc)


def _load_limit(args) -> LimitExperimentConfig:
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        raise CliError(str(exc)) from None
    if args.lam is not None:
        cfg = cfg.with_lambda(args.lam)
    return cfg


def _status_code(status: str) -> int:
    return EXIT_OK if status in (CONVERGED, DIVERGED) else EXIT_NONCONVERGED


# ---------------------------------------------------------------------------
# commands


def cmd_dual_check(args) -> int:
    t0 = time.perf_counter()
    doc = _read_json(args.space)
    try:
        lam = args.lam if args.lam is not None else doc["lambda"]
        problem = FiniteSpacePrimal(doc["q"], doc["loss"], doc.get("phi", []), lam,
                                    bool(doc.get("inequality", False)))
    except KeyError as exc:
        raise CliError(f"space file is missing key {exc.args[0]!r}") from None
    primal, p = primal_risk_finite_space(problem)
    dual = finite_space_dual(problem)
    gap = abs(primal - dual.value)
    ok = gap <= 1e-6 * (1.0 + abs(primal))
    _emit(args, {
        "primal": primal, "dual": dual.value, "gap": gap, "within_tolerance": ok,
        "worst_case_p": p, "beta_star": dual.beta_star, "status": dual.status,
        "manifest": _manifest(args, "dual-check", t0, space=args.space, lam=problem.lam),
    })
    return EXIT_OK if ok else EXIT_NONCONVERGED


def cmd_risk(args) -> int:
    t0 = time.perf_counter()
    cfg = _load_limit(args)
    rule = _load_rule(args.rule)
    integ = _integrator(args)
    if args.M is None:
        rep = infinite_m_risk(cfg, rule, integrator=integ)
    else:
        rep = finite_m_dual_risk(cfg, rule, M=args.M, integrator=integ)
    _emit(args, {**rep.to_dict(), "M": "inf" if args.M is None else args.M, "rule": rule.to_dict(),
                 "manifest": _manifest(args, "risk", t0, limit=cfg.to_dict(), rule=rule.to_dict())})
    return _status_code(rep.status)


def cmd_optimal(args) -> int:
    t0 = time.perf_counter()
    cfg = _load_limit(args)
    rule, rep = optimal_rule(cfg, args.M, integrator=_integrator(args))
    _emit(args, {"rule": rule.to_dict(), **rep.to_dict(), "dual_value": rep.info.get("dual_value"),
                 "M": "inf" if args.M is None else args.M,
                 "manifest": _manifest(args, "optimal", t0, limit=cfg.to_dict())})
    return _status_code(rep.status)


def _tune_linear(omega, grid, integ) -> tuple[float, AdaptiveReport]:
    def regret(c):
        return rule_risk_curve(RuleSpec.linear(c), omega, grid, integ).worst_case_regret

    c, _ = golden_section(regret, 0.0, 1.0, tol=1e-6)
    return c, rule_risk_curve(RuleSpec.linear(c), omega, grid, integ)


def _adaptive_family(family, args, grid, integ) -> tuple[AdaptiveReport, dict]:
    if family in ("st", "erm"):
        if args.tau is not None and not args.auto:
            rule = RuleSpec.soft_threshold(args.tau) if family == "st" else RuleSpec.erm(args.tau)
            return rule_risk_curve(rule, args.omega, grid, integ), {"tau": args.tau, "tuned": False}
        tau, rep = tune_threshold("soft_threshold" if family == "st" else "erm", args.omega, grid, integ)
        return rep, {"tau": tau, "tuned": True}
    if family == "spline":
        rule, rep = optimize_spline(args.omega, grid, n_knots=args.n_knots, integrator=integ)
        return rep, {"knots": rule.knots, "values": rule.values, "status": rep.info.get("status")}
    if args.c is not None:
        return rule_risk_curve(RuleSpec.linear(args.c), args.omega, grid, integ), {"C": args.c, "tuned": False}
    c, rep = _tune_linear(args.omega, grid, integ)
    return rep, {"C": c, "tuned": True}


def cmd_adaptive(args) -> int:
    t0 = time.perf_counter()
    grid = LambdaGrid(args.log_lambda_min, args.log_lambda_max, args.grid_points)
    integ = _integrator(args)
    families = ["st", "erm", "spline"] if args.family == "all" else [args.family]
    out = Path(args.out) if args.out else Path(f"adaptive_{args.family}.csv")
    if args.family == "all":
        out.mkdir(parents=True, exist_ok=True)
    summary = {}
    code = EXIT_OK
    for fam in families:
        rep, detail = _adaptive_family(fam, args, grid, integ)
        path = out / f"{fam}.csv" if args.family == "all" else out
        write_curve_csv(rep, path)
        entry = {"regret": rep.regret, "all_finite": rep.all_finite, "argmax_lambda": rep.argmax_lambda,
                 "csv": str(path), **detail}
        summary[fam] = entry
        sidecar = Path(str(path) + ".manifest.json")
        sidecar.write_text(to_json(_manifest(args, "adaptive", t0, omega=args.omega, family=fam,
                                             grid=[grid.log_lambda_min, grid.log_lambda_max, grid.n_points],
                                             **detail)) + "\n")
        if detail.get("status") == "max_iterations":
            code = EXIT_NONCONVERGED
    text = to_json({"omega": args.omega, "families": summary}) + "\n"
    if args.family == "all":
        (out / "summary.json").write_text(text)
    sys.stdout.write(text)
    return code


def cmd_ate(args) -> int:
    t0 = time.perf_counter()
    cfg = AteConfig(args.mu0, args.mu1, args.pi1, args.n, (args.h0, args.h1))
    rule = _load_rule(args.rule)
    rec = mc_attainability(cfg, rule, args.M, args.lam, args.reps, args.seed, integrator=_integrator(args))
    _emit(args, {**rec.to_dict(), "rule": rule.to_dict(),
                 "manifest": _manifest(args, "ate", t0, mu0=args.mu0, mu1=args.mu1, pi1=args.pi1, n=args.n,
                                       h=[args.h0, args.h1], lam=args.lam, M=args.M, reps=args.reps)})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("integration")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--nodes", type=int, default=128, help="Gauss-Hermite nodes per dimension")
    g.add_argument("--mc-draws", type=int, default=1_000_000)
    g.add_argument("--tol", type=float, default=1e-8)
    g.add_argument("--out", default=None, help="output path (stdout when omitted)")

    parser = argparse.ArgumentParser(prog="cmrisk", description="Robust risk in Gaussian limit experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dual-check", parents=[common], help="primal and dual values on a finite space")
    p.add_argument("space", help="JSON with q, loss, phi, lambda and optional inequality")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.set_defaults(func=cmd_dual_check)

    for name, func, helptext in (("risk", cmd_risk, "risk of a rule"), ("optimal", cmd_optimal, "optimal rule")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--config", required=True, help="JSON with I0, Psi, Omega, K, lambda")
        if name == "risk":
            p.add_argument("--rule", required=True, help="rule JSON text or file")
        p.add_argument("--M", type=_parse_m, default=None, help="moment order or 'inf' (default)")
        p.add_argument("--lambda", dest="lam", type=float, default=None, help="override lambda")
        p.set_defaults(func=func)

    p = sub.add_parser("adaptive", parents=[common], help="risk curves across lambda")
    p.add_argument("--omega", type=float, default=2.0)
    p.add_argument("--family", choices=("st", "erm", "spline", "linear", "all"), default="all")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--auto", action="store_true", help="tune tau even if --tau is given")
    p.add_argument("--c", type=float, default=None, help="coefficient for the linear family")
    p.add_argument("--grid-points", type=int, default=37)
    p.add_argument("--log-lambda-min", type=float, default=-3.0)
    p.add_argument("--log-lambda-max", type=float, default=6.0)
    p.add_argument("--n-knots", type=int, default=11)
    p.set_defaults(func=cmd_adaptive)

    p = sub.add_parser("ate", parents=[common], help="finite-sample attainability in the treatment example")
    p.add_argument("--mu0", type=float, default=0.5)
    p.add_argument("--mu1", type=float, default=0.5)
    p.add_argument("--pi1", type=float, default=0.5)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--h0", type=float, default=0.0)
    p.add_argument("--h1", type=float, default=0.0)
    p.add_argument("--lambda", dest="lam", type=float, default=8.0)
    p.add_argument("--M", type=int, default=0)
    p.add_argument("--reps", type=int, default=10_000)
    p.add_argument("--rule", default='{"family": "zero"}')
    p.set_defaults(func=cmd_ate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, RuleError, AdaptiveError, AteError, UnsupportedOrderError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
