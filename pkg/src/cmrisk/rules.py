"""Equivariant decision rules ``delta(X, Y) = K X + gamma(Z)`` and losses."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

FAMILIES = ("zero", "linear", "soft_threshold", "erm", "spline")
SCALAR_FAMILIES = ("soft_threshold", "erm", "spline")

# ERM is represented piecewise-linearly on knots sqrt(tau) * sinh(v)
_ERM_KNOTS = 2001
_ERM_SPAN = 2000.0


class RuleError(ValueError):
    """Invalid rule specification."""


def gamma_eval(family: str, param, z):
    """Evaluate a scalar shrinkage map at ``z``.

    Parameters
    ----------
    family : {"soft_threshold", "erm", "spline", "zero", "linear"}
    param : float or tuple
        ``tau`` for soft-threshold and ERM, ``(knots, values)`` for a spline,
        the coefficient ``C`` for a linear map; ignored for ``zero``.
    z : float or ndarray

    Returns
    -------
    float or ndarray
    """
    z = np.asarray(z, dtype=float)
    if family == "zero":
        out = np.zeros_like(z)
    elif family == "linear":
        out = float(np.asarray(param).reshape(-1)[0]) * z
    elif family == "soft_threshold":
        tau = _positive(param, "tau")
        out = np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)
    elif family == "erm":
        tau = _positive(param, "tau")
        out = z**3 / (z**2 + tau)
    elif family == "spline":
        knots, values = (np.asarray(a, dtype=float) for a in param)
        out = np.interp(z, knots, values)
        out = np.where(z < knots[0], values[0] + (z - knots[0]), out)
        out = np.where(z > knots[-1], values[-1] + (z - knots[-1]), out)
    else:
        raise RuleError(f"unknown family {family!r}")
    return out[()] if out.ndim == 0 else out


def _positive(tau, name):
    tau = float(tau)
    if not (tau > 0 and np.isfinite(tau)):
        raise RuleError(f"{name} must be positive, got {tau}")
    return tau


@dataclass(frozen=True)
class PiecewiseLinear:
    """Continuous piecewise-linear scalar map with linear tails."""

    knots: np.ndarray
    values: np.ndarray
    slope_left: float
    slope_right: float

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        out = np.interp(z, self.knots, self.values)
        out = np.where(z < self.knots[0], self.values[0] + self.slope_left * (z - self.knots[0]), out)
        return np.where(z > self.knots[-1], self.values[-1] + self.slope_right * (z - self.knots[-1]), out)


@dataclass(frozen=True)
class RuleSpec:
    """An equivariant rule ``delta = K X + gamma(Z)``.

    Use the constructors :meth:`zero`, :meth:`linear`, :meth:`soft_threshold`,
    :meth:`erm` and :meth:`spline`.
    """

    family: str
    C: np.ndarray | None = None
    tau: float | None = None
    knots: np.ndarray | None = None
    values: np.ndarray | None = None
    _pwl: PiecewiseLinear | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise RuleError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "linear":
            if self.C is None:
                raise RuleError("linear rule needs C")
            c = np.atleast_2d(np.asarray(self.C, dtype=float))
            if not np.all(np.isfinite(c)):
                raise RuleError("C has non-finite entries")
            c.setflags(write=False)
            object.__setattr__(self, "C", c)
        if self.family in ("soft_threshold", "erm"):
            object.__setattr__(self, "tau", _positive(self.tau, "tau"))
        if self.family == "spline":
            knots = np.asarray(self.knots, dtype=float).ravel()
            values = np.asarray(self.values, dtype=float).ravel()
            if knots.size < 2 or knots.size != values.size:
                raise RuleError("spline needs >= 2 knots and one value per knot")
            if np.any(np.diff(knots) <= 0):
                raise RuleError("spline knots must be strictly increasing")
            if not (np.all(np.isfinite(knots)) and np.all(np.isfinite(values))):
                raise RuleError("spline knots/values must be finite")
            knots.setflags(write=False)
            values.setflags(write=False)
            object.__setattr__(self, "knots", knots)
            object.__setattr__(self, "values", values)

    @classmethod
    def zero(cls) -> "RuleSpec":
        return cls("zero")

    @classmethod
    def linear(cls, C) -> "RuleSpec":
        return cls("linear", C=C)

    @classmethod
    def soft_threshold(cls, tau: float) -> "RuleSpec":
        return cls("soft_threshold", tau=tau)

    @classmethod
    def erm(cls, tau: float) -> "RuleSpec":
        return cls("erm", tau=tau)

    @classmethod
    def spline(cls, knots, values) -> "RuleSpec":
        return cls("spline", knots=knots, values=values)

    @property
    def is_scalar_family(self) -> bool:
        return self.family in SCALAR_FAMILIES

    def validate(self, config) -> None:
        """Check dimensions against a :class:`LimitExperimentConfig`."""
        if self.is_scalar_family and not (config.k == 1 and config.d == 1):
            raise RuleError(f"{self.family} rules require k = d = 1, got k={config.k}, d={config.d}")
        if self.family == "linear":
            C = self.C
            if C.shape != (config.d, config.k):
                if config.d == config.k == 1 and C.size == 1:
                    return
                raise RuleError(f"C must be {config.d}x{config.k}, got {C.shape}")

    def c_matrix(self, config) -> np.ndarray:
        if self.family == "linear":
            return self.C.reshape(config.d, config.k)
        return np.zeros((config.d, config.k))

    def gamma(self, z) -> np.ndarray:
        """``gamma(z)`` for ``z`` of shape (..., k); returns shape (..., d)."""
        z = np.asarray(z, dtype=float)
        if self.family == "zero":
            return np.zeros(z.shape[:-1] + (1,)) if z.ndim else np.zeros(1)
        if self.family == "linear":
            return z @ self.C.T
        zs = z[..., 0]
        if self.family == "spline":
            g = gamma_eval("spline", (self.knots, self.values), zs)
        else:
            g = gamma_eval(self.family, self.tau, zs)
        return np.asarray(g)[..., None]

    def delta(self, config, x, y) -> np.ndarray:
        """Action at observations ``x`` (..., p), ``y`` (..., k)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        z = y + x @ config.psi.T
        kx = x @ config.k_mat.T
        if self.family == "zero":
            return kx
        return kx + self.gamma(z)

    def tail_slope(self) -> float:
        """Asymptotic slope of a scalar ``gamma`` (identical in both tails)."""
        if self.family == "zero":
            return 0.0
        if self.family == "linear":
            return float(self.C.reshape(-1)[0])
        return 1.0

    def asymptotic_c(self, config) -> np.ndarray:
        """Linear map ``C_inf`` with ``gamma(z) - C_inf z`` bounded."""
        if self.family == "linear":
            return self.c_matrix(config)
        if self.family == "zero":
            return np.zeros((config.d, config.k))
        return np.ones((1, 1))

    def piecewise_linear(self) -> PiecewiseLinear:
        """Exact (or, for ERM, fine-grid) piecewise-linear form of scalar ``gamma``."""
        if self._pwl is not None:
            return self._pwl
        if self.family == "zero":
            pwl = PiecewiseLinear(np.array([-1.0, 1.0]), np.zeros(2), 0.0, 0.0)
        elif self.family == "linear":
            if self.C.size != 1:
                raise RuleError("piecewise-linear form needs a scalar rule")
            c = float(self.C.reshape(-1)[0])
            pwl = PiecewiseLinear(np.array([-1.0, 1.0]), np.array([-c, c]), c, c)
        elif self.family == "soft_threshold":
            t = self.tau
            pwl = PiecewiseLinear(np.array([-t, t]), np.zeros(2), 1.0, 1.0)
        elif self.family == "spline":
            pwl = PiecewiseLinear(self.knots, self.values, 1.0, 1.0)
        else:
            v = np.linspace(-np.arcsinh(_ERM_SPAN), np.arcsinh(_ERM_SPAN), _ERM_KNOTS)
            z = np.sqrt(self.tau) * np.sinh(v)
            pwl = PiecewiseLinear(z, gamma_eval("erm", self.tau, z), 1.0, 1.0)
        object.__setattr__(self, "_pwl", pwl)
        return pwl

    def to_dict(self) -> dict:
        out: dict = {"family": self.family}
        if self.family == "linear":
            out["C"] = self.C.tolist()
        if self.tau is not None:
            out["tau"] = self.tau
        if self.family == "spline":
            out["knots"] = self.knots.tolist()
            out["values"] = self.values.tolist()
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "RuleSpec":
        family = doc.get("family")
        aliases = {"st": "soft_threshold", "soft-threshold": "soft_threshold"}
        family = aliases.get(family, family)
        if family == "linear":
            return cls.linear(doc["C"])
        if family in ("soft_threshold", "erm"):
            return cls(family, tau=doc["tau"])
        if family == "spline":
            return cls.spline(doc["knots"], doc["values"])
        return cls(family)


@dataclass(frozen=True)
class LossSpec:
    """Convex loss ``l(u)`` on actions minus target.

    ``fn`` maps arrays of shape (..., d) to (...).  ``None`` means squared
    Euclidean loss, which enables analytic paths.
    """

    fn: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "squared"

    @classmethod
    def squared(cls) -> "LossSpec":
        return cls()

    @property
    def is_squared(self) -> bool:
        return self.fn is None

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.fn is None:
            return np.sum(u * u, axis=-1)
        return np.asarray(self.fn(u), dtype=float)

    def tilted(self, u, lam: float) -> np.ndarray:
        """``exp(l(u) / lam)``."""
        with np.errstate(over="ignore"):
            return np.exp(self(u) / lam)

    def spot_check(self, d: int, seed: int = 0, trials: int = 200) -> bool:
        """Check ``l(0)`` is minimal and midpoint convexity on random segments."""
        rng = np.random.default_rng(seed)
        a = rng.normal(scale=2.0, size=(trials, d))
        b = rng.normal(scale=2.0, size=(trials, d))
        l0 = float(self(np.zeros(d)))
        la, lb, lm = self(a), self(b), self(0.5 * (a + b))
        slack = 1e-9 * (1 + np.abs(la) + np.abs(lb))
        return bool(np.all(la >= l0 - 1e-12) and np.all(lm <= 0.5 * (la + lb) + slack))
