import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cmrisk.ate import (CELLS, AteConfig, AteDataset, AteError, ate_limit_matrices, cell_probabilities,
                        exact_moment_targets, exact_zero_rule_risk, mc_attainability, mle, plug_in_estimator,
                        plug_in_from_counts, psi_eval, simulate_ate)
from cmrisk.experiment import LimitExperimentConfig, sample
from cmrisk.moments import build_moment_spec, w_vector
from cmrisk.rules import RuleSpec


def dataset(units):
    u = np.asarray(units)
    c = u[:, 2] if u.shape[1] == 3 else np.ones(len(u), dtype=int)
    return AteDataset(u[:, 0], u[:, 1], c)


# -- simulation and estimation


def test_simulate_degenerate_and_deterministic():
    d = simulate_ate(AteConfig(0.5, 1.0, 0.5, 500), seed=1)
    assert np.all(d.y[d.d == 1] == 1)
    a, b = simulate_ate(AteConfig(0.3, 0.6, 0.4, 100), 7), simulate_ate(AteConfig(0.3, 0.6, 0.4, 100), 7)
    for f in ("y", "d", "c"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_design_balance():
    d = simulate_ate(AteConfig(0.5, 0.5, 0.5, 100_000), seed=2)
    assert abs(d.d.mean() - 0.5) < 3 * 0.5 / np.sqrt(1e5)
    assert abs((d.c == 1).mean() - 0.5) < 3 * 0.5 / np.sqrt(1e5)


def test_mle_examples():
    est = mle(dataset([(1, 1), (0, 1), (1, 0), (1, 0)]))
    np.testing.assert_array_equal(est.theta, [1.0, 0.5])
    assert est.fallback == (False, False)
    est = mle(dataset([(1, 1), (0, 1)]))
    assert est.theta[0] == 0.5 and est.fallback == (True, False)
    big = mle(simulate_ate(AteConfig(0.5, 0.5, 0.5, 1_000_000), seed=3))
    assert np.all(np.abs(big.theta - 0.5) < 3e-3)


def test_config_validation():
    with pytest.raises(AteError):
        AteConfig(0.5, 0.5, 1.0, 10)
    with pytest.raises(AteError):
        AteConfig(0.5, 0.99, 0.5, 4, (0.0, 1.0))
    with pytest.raises(AteError):
        ate_limit_matrices(0.0, 0.5, 0.5)


def test_psi_examples():
    np.testing.assert_allclose(psi_eval([0.5, 0.5], 0.5, (1, 1, 1)), [0.0, 0.5, 0.5, 0.5])
    np.testing.assert_allclose(psi_eval([0.3, 0.8], 0.4, (1, 0, 2)), [0.0, 0.0, 0.0, -0.4])


def test_psi_centered_in_samples():
    cfg = AteConfig(0.3, 0.7, 0.4, 200_000)
    d = simulate_ate(cfg, 4)
    v = psi_eval(cfg.theta0, cfg.pi1, np.stack([d.y, d.d, d.c], axis=1))
    assert np.all(np.abs(v.mean(0)) < 3.5 * v.std(0) / np.sqrt(v.shape[0]))


def test_limit_matrices():
    cfg = ate_limit_matrices(0.5, 0.5, 0.5)
    np.testing.assert_allclose(cfg.i0_inv, np.diag([0.5, 0.5]))
    np.testing.assert_allclose(cfg.omega, np.diag([1 / 16, 1 / 16, 1 / 8, 1 / 4]))
    assert (cfg.k_mat @ cfg.i0_inv @ cfg.k_mat.T)[0, 0] == pytest.approx(1.0)
    np.testing.assert_array_equal(cfg.psi[2:], 0.0)
    assert isinstance(cfg, LimitExperimentConfig)


@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_limit_matrices_match_moment_variance(mu0, mu1, pi1):
    cfg = ate_limit_matrices(mu0, mu1, pi1)
    p = cell_probabilities([mu0, mu1], pi1)
    vals = psi_eval([mu0, mu1], pi1, CELLS)
    np.testing.assert_allclose((vals * p[:, None]).T @ vals, cfg.omega, atol=1e-14)
    # Jacobian of E psi in theta
    eps = 1e-6
    jac = np.stack([
        (cell_probabilities([mu0, mu1], pi1) @ (psi_eval([mu0 + eps * (j == 0), mu1 + eps * (j == 1)], pi1, CELLS)
                                                 - vals)) / eps for j in range(2)], axis=1)
    np.testing.assert_allclose(jac, cfg.psi, atol=1e-8)


# -- plug-in


def test_plugin_zero_is_difference_in_means():
    cfg = AteConfig(0.4, 0.6, 0.5, 300)
    d = simulate_ate(cfg, 5)
    est = plug_in_estimator(d, cfg, RuleSpec.zero())
    assert est.kappa_hat == d.y[d.d == 1].mean() - d.y[d.d == 0].mean()


def test_plugin_linear_formula():
    cfg = AteConfig(0.4, 0.6, 0.5, 300)
    d = simulate_ate(cfg, 6)
    C = np.array([[0.3, -0.2, 0.1, 0.05]])
    est = plug_in_estimator(d, cfg, RuleSpec.linear(C))
    th = mle(d).theta
    units = np.stack([d.y, d.d, d.c], axis=1)
    y_stat = psi_eval(th, cfg.pi1, units).sum(0) / np.sqrt(d.n)
    np.testing.assert_allclose(est.y_stat, y_stat, atol=1e-12)
    assert est.kappa_hat == pytest.approx(th[1] - th[0] + (C @ y_stat)[0] / np.sqrt(d.n), abs=1e-14)
    assert -1.0 <= est.kappa_hat <= 1.0


def test_plugin_callable_rule_and_clamp():
    cfg = AteConfig(0.4, 0.6, 0.5, 50)
    d = simulate_ate(cfg, 8)
    seen = {}

    def build(sig):
        seen["omega"] = sig.omega
        return RuleSpec.linear([[1e6, 0.0, 0.0, 0.0]])

    est = plug_in_estimator(d, cfg, build)
    assert "omega" in seen and est.clamped and abs(est.kappa_hat) == 1.0


def test_plugin_fallback_warns():
    d = dataset([(1, 1, 1), (0, 1, 2), (1, 1, 1)])
    with pytest.warns(RuntimeWarning):
        est = plug_in_estimator(d, AteConfig(0.5, 0.5, 0.5, 3), RuleSpec.zero())
    assert est.fallback == (True, False)


@pytest.mark.parametrize("rule", [RuleSpec.zero(), RuleSpec.linear([[0.5, -0.5, 0.2, 0.1]])])
def test_plugin_distribution_matches_limit_law(rule):
    n, reps = 2000, 10_000
    cfg = AteConfig(0.5, 0.5, 0.5, n)
    counts = np.random.default_rng(9).multinomial(n, cell_probabilities(cfg.theta_nh, cfg.pi1), size=reps)
    k, *_ = plug_in_from_counts(counts, n, cfg.pi1, rule)
    T = np.sqrt(n) * (k - cfg.kappa_nh())
    lim = ate_limit_matrices(0.5, 0.5, 0.5)
    x, y = sample(lim, np.zeros(2), 200_000, seed=10)
    D = rule.delta(lim, x, y)[:, 0]
    assert abs(T.mean() - D.mean()) <= 0.1 * D.std()
    assert T.var() == pytest.approx(D.var(), rel=0.1)


# -- exact centering of the finite-sample moment vector


def enumerate_expectation(theta, pi1, n, f):
    """Exact ``E f(cell counts)`` by summing over all ``8^n`` unit sequences."""
    p = cell_probabilities(theta, pi1)
    total = 0.0
    for seq in itertools.product(range(8), repeat=n):
        counts = np.bincount(seq, minlength=8)
        total += np.prod(p[list(seq)]) * f(counts)
    return total


@pytest.mark.parametrize("M", [2, 3, 4])
def test_exact_targets_by_enumeration(M):
    theta, pi1, n = np.array([0.3, 0.65]), 0.4, 3
    spec = build_moment_spec(ate_limit_matrices(0.3, 0.65, 0.4).omega, M)
    got = exact_moment_targets(spec, theta, pi1, n)
    vals = psi_eval(theta, pi1, CELLS)

    def mono(counts):
        yv = counts @ vals / np.sqrt(n)
        return np.prod(yv[None, :] ** spec.indices, axis=1)

    want = enumerate_expectation(theta, pi1, n, mono)
    np.testing.assert_allclose(got, want, atol=1e-13)


def test_second_order_targets_equal_omega():
    lim = ate_limit_matrices(0.5, 0.5, 0.5)
    spec = build_moment_spec(lim.omega, 2)
    np.testing.assert_allclose(exact_moment_targets(spec, [0.5, 0.5], 0.5, 2000), spec.targets, atol=1e-15)


@pytest.mark.parametrize("M", [1, 2])
def test_w_centered_under_finite_sample_law(M):
    cfg = AteConfig(0.4, 0.6, 0.5, 400, (1.0, -1.0))
    lim = ate_limit_matrices(0.4, 0.6, 0.5)
    spec = build_moment_spec(lim.omega, M)
    tgt = exact_moment_targets(spec, cfg.theta_nh, cfg.pi1, cfg.n)
    counts = np.random.default_rng(11).multinomial(cfg.n, cell_probabilities(cfg.theta_nh, cfg.pi1), size=100_000)
    y = counts @ psi_eval(cfg.theta_nh, cfg.pi1, CELLS) / np.sqrt(cfg.n)
    w = w_vector(spec, y) - (tgt - spec.targets)
    se = w.std(0) / np.sqrt(w.shape[0])
    assert np.all(np.abs(w.mean(0)) <= 3.5 * se + 1e-12)


# -- attainability


def test_exact_zero_rule_oracle_by_enumeration():
    cfg = AteConfig(0.3, 0.6, 0.5, 5)
    lam = 8.0

    def tilted(counts):
        k, *_ = plug_in_from_counts(counts, cfg.n, cfg.pi1, RuleSpec.zero())
        return np.exp(cfg.n * (k[0] - cfg.kappa_nh()) ** 2 / lam)

    want = lam * np.log(enumerate_expectation(cfg.theta_nh, cfg.pi1, cfg.n, tilted))
    assert exact_zero_rule_risk(cfg, lam) == pytest.approx(want, rel=1e-10)


def test_attainability_record():
    cfg = AteConfig(0.5, 0.5, 0.5, 2000)
    rec = mc_attainability(cfg, RuleSpec.zero(), 0, 8.0, 10_000, seed=1)
    assert rec.limit_value == pytest.approx(-4 * np.log(0.75), rel=1e-6)
    assert rec.standard_error > 0
    assert rec.relative_gap <= 0.10
    exact = exact_zero_rule_risk(cfg, 8.0)
    assert abs(rec.finite_sample_value - exact) <= 4 * rec.standard_error
    d = rec.to_dict()
    assert set(d) >= {"finite_sample_value", "standard_error", "limit_value", "beta_star"}


def test_attainability_equivariance_in_h():
    base = mc_attainability(AteConfig(0.5, 0.5, 0.5, 2000), RuleSpec.zero(), 0, 8.0, 10_000, seed=2)
    shifted = mc_attainability(AteConfig(0.5, 0.5, 0.5, 2000, (1.0, -1.0)), RuleSpec.zero(), 0, 8.0, 10_000, seed=2)
    assert shifted.limit_value == pytest.approx(base.limit_value, rel=1e-10)
    assert abs(shifted.finite_sample_value - base.finite_sample_value) <= 4 * np.hypot(
        base.standard_error, shifted.standard_error)


def test_attainability_with_moments():
    rec = mc_attainability(AteConfig(0.5, 0.5, 0.5, 2000), RuleSpec.zero(), 2, 8.0, 20_000, seed=3)
    assert len(rec.beta_star) == 14
    assert rec.limit_value < -4 * np.log(0.75)
    assert abs(rec.finite_sample_value - rec.limit_value) <= max(4 * rec.standard_error, 0.1 * rec.limit_value)


def test_exact_gap_shrinks_with_n():
    lim = -4 * np.log(0.75)
    gaps = [abs(exact_zero_rule_risk(AteConfig(0.5, 0.5, 0.5, n), 8.0) - lim) for n in (500, 2000, 8000)]
    assert gaps[0] >= gaps[1] >= gaps[2]
    assert gaps[2] < 1e-3


def test_reps_validation():
    with pytest.raises(AteError):
        mc_attainability(AteConfig(0.5, 0.5, 0.5, 10), RuleSpec.zero(), 0, 8.0, 1, seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        mc_attainability(AteConfig(0.5, 0.5, 0.5, 10), RuleSpec.zero(), 0, 8.0, 100, seed=0)
