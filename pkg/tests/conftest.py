import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def scalar2():
    from cmrisk import LimitExperimentConfig

    return LimitExperimentConfig.normalized(2.0, 4.0)


@pytest.fixture
def ate_half():
    from cmrisk import ate_limit_matrices

    return ate_limit_matrices(0.5, 0.5, 0.5, 8.0)


def spd(rng, k, scale=1.0):
    a = rng.standard_normal((k, k))
    return scale * (a @ a.T + k * np.eye(k))


@pytest.fixture(scope="session")
def tuned_omega2():
    """Tuned soft-threshold, tuned ERM and optimized spline at omega = 2 on the default grid."""
    import time

    from cmrisk.adaptive import LambdaGrid, optimize_spline, tune_threshold

    t0 = time.perf_counter()
    grid = LambdaGrid()
    tau_st, st = tune_threshold("soft_threshold", 2.0, grid)
    tau_erm, erm = tune_threshold("erm", 2.0, grid)
    _, spline = optimize_spline(2.0, grid)
    return {"st": st, "erm": erm, "spline": spline, "tau_st": tau_st, "tau_erm": tau_erm,
            "seconds": time.perf_counter() - t0}


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion."""
    import time

    t0 = time.perf_counter()
    box = {}

    def set_label(label):
        box["label"] = label

    yield set_label
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    line = f"{box.get('label', request.node.name)}: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - t0:.1f}s)"
    print(line)
    ACCEPTANCE_LINES.append(line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
