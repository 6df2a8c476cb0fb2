import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cmrisk.ate import ate_limit_matrices
from cmrisk.experiment import LimitExperimentConfig
from cmrisk.rules import LossSpec, RuleError, RuleSpec, gamma_eval


def test_gamma_examples():
    assert gamma_eval("soft_threshold", 1.0, 2.0) == 1.0
    assert gamma_eval("soft_threshold", 1.0, 0.5) == 0.0
    assert gamma_eval("erm", 1.0, 1.0) == 0.5
    assert gamma_eval("spline", ([-1.0, 0.0, 1.0], [-0.5, 0.0, 0.5]), 3.0) == pytest.approx(2.5)


def test_invalid_rules():
    with pytest.raises(RuleError):
        RuleSpec.soft_threshold(0.0)
    with pytest.raises(RuleError):
        RuleSpec.spline([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(RuleError):
        RuleSpec.spline([0.0], [1.0])
    with pytest.raises(RuleError):
        RuleSpec("bogus")
    with pytest.raises(RuleError):
        RuleSpec.erm(1.0).validate(ate_limit_matrices(0.5, 0.5, 0.5))
    with pytest.raises(RuleError):
        RuleSpec.linear([[1.0, 2.0]]).validate(LimitExperimentConfig.normalized(2.0))


@pytest.mark.parametrize("rule", [
    RuleSpec.zero(), RuleSpec.linear([[0.3]]), RuleSpec.soft_threshold(0.4), RuleSpec.erm(0.7),
    RuleSpec.spline([-1.0, 0.0, 2.0], [-0.2, 0.1, 1.0]),
])
def test_dict_round_trip(rule):
    back = RuleSpec.from_dict(rule.to_dict())
    z = np.linspace(-5, 5, 41)[:, None]
    np.testing.assert_array_equal(back.gamma(z), rule.gamma(z))
    assert RuleSpec.from_dict({"family": "st", "tau": 0.5}).family == "soft_threshold"


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 3))
def test_equivariance_of_delta(x, y, g, tau):
    cfg = LimitExperimentConfig.normalized(2.5)
    for rule in (RuleSpec.soft_threshold(tau), RuleSpec.erm(tau), RuleSpec.linear([[tau]])):
        a = rule.delta(cfg, np.array([[x + g]]), np.array([[y + g]]))  # y - Psi g = y + g
        b = rule.delta(cfg, np.array([[x]]), np.array([[y]]))
        assert a[0, 0] == pytest.approx(b[0, 0] + g, abs=1e-9)


@given(st.floats(0.01, 5))
def test_piecewise_forms_match_formula(tau):
    z = np.linspace(-30, 30, 2001)
    for rule in (RuleSpec.soft_threshold(tau), RuleSpec.spline([-1.0, 0.5, 2.0], [0.0, 0.3, -0.2])):
        np.testing.assert_allclose(rule.piecewise_linear()(z), rule.gamma(z[:, None])[:, 0], atol=1e-12)
    # ERM is approximated by a dense interpolant; the error is second order in the knot spacing
    pw = RuleSpec.erm(tau).piecewise_linear()
    err = np.max(np.abs(pw(z) - gamma_eval("erm", tau, z)))
    assert err < 1e-2 * max(1.0, np.sqrt(tau))


def test_tail_slopes():
    assert RuleSpec.soft_threshold(1.0).tail_slope() == 1.0
    assert RuleSpec.spline([-1.0, 1.0], [0.0, 0.0]).tail_slope() == 1.0
    assert RuleSpec.zero().tail_slope() == 0.0


def test_loss_spec():
    sq = LossSpec()
    assert sq.is_squared
    np.testing.assert_allclose(sq(np.array([[3.0, 4.0]])), [25.0])
    assert np.all(sq.tilted(np.zeros((3, 1)), 2.0) >= 1.0)
    ab = LossSpec(lambda u: np.abs(u).sum(-1), "abs")
    assert not ab.is_squared
    assert ab.spot_check(2)
    bad = LossSpec(lambda u: -np.abs(u).sum(-1), "concave")
    assert not bad.spot_check(1)
