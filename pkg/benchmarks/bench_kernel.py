"""Compare the compiled and NumPy piecewise-linear kernels.

Usage: python3 benchmarks/bench_kernel.py [--repeat N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from cmrisk.experiment import LimitExperimentConfig, conditional_x_given_y
from cmrisk.kernels import BACKEND, log_inner_compiled, log_inner_python
from cmrisk.quadrature import gh_standard
from cmrisk.rules import RuleSpec

CASES = {
    "soft_threshold (4 pieces)": RuleSpec.soft_threshold(0.4),
    "spline (11 knots)": RuleSpec.spline(np.linspace(-4, 4, 11), np.tanh(np.linspace(-4, 4, 11))),
    "erm (2001 knots)": RuleSpec.erm(0.78),
}


def _inputs(rule, lam=4.0, omega=2.0, nodes=128):
    cfg = LimitExperimentConfig.normalized(omega, lam)
    cond = conditional_x_given_y(cfg)
    t, _ = gh_standard(nodes)
    y = np.sqrt(omega) * np.asarray(t)
    pw = rule.piecewise_linear()
    s = float(np.sqrt(cond.cond_cov[0, 0]))
    slope = float(cond.slope[0, 0])
    return (y, slope * y, s, 1.0, -1.0, pw.knots, pw.values, pw.slope_left, pw.slope_right, lam)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    print(f"default backend: {BACKEND}")
    print(f"{'case':28s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, rule in CASES.items():
        inp = _inputs(rule)
        tp = min(timeit.repeat(lambda: log_inner_python(*inp), number=1, repeat=args.repeat)) * 1e3
        ref = log_inner_python(*inp)
        if log_inner_compiled is None:
            print(f"{name:28s} {tp:10.3f} {'n/a':>12s}")
            continue
        tc = min(timeit.repeat(lambda: log_inner_compiled(*inp), number=1, repeat=args.repeat)) * 1e3
        diff = float(np.max(np.abs(np.asarray(log_inner_compiled(*inp)) - ref)))
        print(f"{name:28s} {tp:10.3f} {tc:12.3f} {tp / tc:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
