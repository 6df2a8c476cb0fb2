"""Constrained multiplier risk in Gaussian limit experiments."""

__version__ = "0.1.0"

from .adaptive import (AdaptiveReport, LambdaGrid, optimize_spline, pointwise_optimal_risk,  # noqa: E402
                       rule_risk_curve, tune_threshold)
from .ate import AteConfig, ate_limit_matrices, mc_attainability, plug_in_estimator, simulate_ate  # noqa: E402
from .dual import (FiniteSpacePrimal, RiskReport, finite_m_dual_risk, finite_space_dual,  # noqa: E402
                   infinite_m_risk, primal_risk_finite_space)
from .experiment import LimitExperimentConfig, joint_law, load_config  # noqa: E402
from .moments import build_moment_spec, gaussian_central_moment, w_vector  # noqa: E402
from .optimal import bayes_rule_tilted, joint_optimize, optimal_rule  # noqa: E402
from .quadrature import IntegratorSettings  # noqa: E402
from .rules import LossSpec, RuleSpec  # noqa: E402

__all__ = [
    "AdaptiveReport", "AteConfig", "FiniteSpacePrimal", "IntegratorSettings", "LambdaGrid",
    "LimitExperimentConfig", "LossSpec", "RiskReport", "RuleSpec", "ate_limit_matrices",
    "bayes_rule_tilted", "build_moment_spec", "finite_m_dual_risk", "finite_space_dual",
    "gaussian_central_moment", "infinite_m_risk", "joint_law", "joint_optimize", "load_config",
    "mc_attainability", "optimal_rule", "optimize_spline", "plug_in_estimator",
    "pointwise_optimal_risk", "primal_risk_finite_space", "rule_risk_curve", "simulate_ate",
    "tune_threshold", "w_vector",
]
