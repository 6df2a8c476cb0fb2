"""Gaussian limit experiment: configuration, joint and conditional laws, sampling.

Under local parameter ``h`` the limit experiment observes

    (X, Y) ~ N((h, -Psi h), [[I0^-1, -I0^-1 Psi'], [-Psi I0^-1, Omega]])

and the target is ``K h``.  ``Z = Y + Psi X`` is the maximal invariant under
the shift group ``(X, Y) -> (X + g, Y - Psi g)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Invalid limit-experiment configuration."""


def _as_matrix(a, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2:
        raise ConfigError(f"{name} must be a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ConfigError(f"{name} has non-finite entries")
    return m


def _check_spd(m: np.ndarray, name: str) -> np.ndarray:
    if m.shape[0] != m.shape[1]:
        raise ConfigError(f"{name} must be square, got {m.shape}")
    if not np.allclose(m, m.T, rtol=1e-12, atol=1e-14):
        raise ConfigError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise ConfigError(f"{name} is not positive definite (Cholesky failed)") from None
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class LimitExperimentConfig:
    """Matrices ``(I0, Psi, Omega, K)`` and aversion ``lam`` of the limit problem.

    Shapes: ``i0`` is p x p, ``psi`` k x p, ``omega`` k x k, ``k_mat`` d x p.
    """

    i0: np.ndarray
    psi: np.ndarray
    omega: np.ndarray
    k_mat: np.ndarray
    lam: float = 1.0
    i0_inv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        i0 = _check_spd(_as_matrix(self.i0, "I0"), "I0")
        omega = _check_spd(_as_matrix(self.omega, "Omega"), "Omega")
        psi = _as_matrix(self.psi, "Psi")
        k_mat = _as_matrix(self.k_mat, "K")
        p, k = i0.shape[0], omega.shape[0]
        if psi.shape != (k, p):
            raise ConfigError(f"Psi must be {k}x{p}, got {psi.shape}")
        if k_mat.shape[1] != p:
            raise ConfigError(f"K must have {p} columns, got {k_mat.shape}")
        lam = float(self.lam)
        if not (lam > 0 and np.isfinite(lam)):
            raise ConfigError(f"lambda must be positive and finite, got {self.lam}")
        for name, val in (("i0", i0), ("omega", omega), ("psi", psi), ("k_mat", k_mat)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "lam", lam)
        i0_inv = np.linalg.inv(i0)
        i0_inv = 0.5 * (i0_inv + i0_inv.T)
        i0_inv.setflags(write=False)
        object.__setattr__(self, "i0_inv", i0_inv)

    @property
    def p(self) -> int:
        return self.i0.shape[0]

    @property
    def k(self) -> int:
        return self.omega.shape[0]

    @property
    def d(self) -> int:
        return self.k_mat.shape[0]

    @property
    def is_scalar(self) -> bool:
        return self.p == self.k == self.d == 1

    def with_lambda(self, lam: float) -> "LimitExperimentConfig":
        return LimitExperimentConfig(self.i0, self.psi, self.omega, self.k_mat, lam)

    @classmethod
    def normalized(cls, omega: float, lam: float = 1.0) -> "LimitExperimentConfig":
        """Scalar problem with ``I0 = 1``, ``Psi = -1``, ``K = 1``."""
        return cls([[1.0]], [[-1.0]], [[float(omega)]], [[1.0]], lam)

    def invariant_covariance(self) -> np.ndarray:
        """``Var(Z) = Omega - Psi I0^-1 Psi'``."""
        v = self.omega - self.psi @ self.i0_inv @ self.psi.T
        return 0.5 * (v + v.T)

    def to_dict(self) -> dict:
        return {
            "I0": self.i0.tolist(),
            "Psi": self.psi.tolist(),
            "Omega": self.omega.tolist(),
            "K": self.k_mat.tolist(),
            "lambda": self.lam,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LimitExperimentConfig":
        missing = [key for key in ("I0", "Psi", "Omega", "K", "lambda") if key not in doc]
        if missing:
            raise ConfigError(f"configuration is missing keys: {', '.join(missing)}")
        return cls(doc["I0"], doc["Psi"], doc["Omega"], doc["K"], doc["lambda"])


def load_config(path) -> LimitExperimentConfig:
    """Read a configuration JSON document (keys I0, Psi, Omega, K, lambda)."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return LimitExperimentConfig.from_dict(doc)


@dataclass(frozen=True)
class JointGaussianLaw:
    mean: np.ndarray
    cov: np.ndarray
    p: int
    k: int

    @property
    def cov_xy(self) -> np.ndarray:
        return self.cov[: self.p, self.p :]


@dataclass(frozen=True)
class ConditionalLawXGivenY:
    """Gaussian law of X given Y: ``X | Y=y ~ N(h + slope (y + Psi h), cond_cov)``."""

    slope: np.ndarray
    cond_cov: np.ndarray
    psi: np.ndarray

    def mean(self, h, y) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        y = np.asarray(y, dtype=float)
        return h + (y + h @ self.psi.T) @ self.slope.T

    def y_mean(self, h) -> np.ndarray:
        return -(np.asarray(h, dtype=float) @ self.psi.T)


def joint_covariance(config: LimitExperimentConfig) -> np.ndarray:
    a = config.i0_inv
    cxy = -a @ config.psi.T
    cov = np.block([[a, cxy], [cxy.T, config.omega]])
    return 0.5 * (cov + cov.T)


def joint_law(config: LimitExperimentConfig, h=None) -> JointGaussianLaw:
    """Law of ``(X, Y)`` under local parameter ``h`` (default 0)."""
    h = np.zeros(config.p) if h is None else np.asarray(h, dtype=float).reshape(config.p)
    mean = np.concatenate([h, -config.psi @ h])
    return JointGaussianLaw(mean=mean, cov=joint_covariance(config), p=config.p, k=config.k)


def conditional_x_given_y(config: LimitExperimentConfig) -> ConditionalLawXGivenY:
    cxy = -config.i0_inv @ config.psi.T
    try:
        omega_inv = np.linalg.inv(config.omega)
    except np.linalg.LinAlgError:
        raise ConfigError("Omega is singular") from None
    slope = cxy @ omega_inv
    cond = config.i0_inv - slope @ cxy.T
    return ConditionalLawXGivenY(slope=slope, cond_cov=0.5 * (cond + cond.T), psi=config.psi)


def invariant_statistic(config: LimitExperimentConfig, x, y) -> np.ndarray:
    """``Z = y + Psi x``; accepts leading batch axes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1:] != (config.p,) and not (config.p == 1 and x.ndim == 0):
        raise ConfigError(f"x must have trailing dimension {config.p}")
    if y.shape[-1:] != (config.k,) and not (config.k == 1 and y.ndim == 0):
        raise ConfigError(f"y must have trailing dimension {config.k}")
    if config.p == 1 and x.ndim == 0:
        x = x[None]
    if config.k == 1 and y.ndim == 0:
        y = y[None]
    return y + x @ config.psi.T


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """A factor ``L`` with ``L L' = cov``; Cholesky when possible, else eigen."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        if vals.min() < -1e-10 * max(1.0, vals.max()):
            raise ConfigError("covariance is not positive semidefinite") from None
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def generator(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator; streams are reproducible per seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


def sample(config: LimitExperimentConfig, h, n_draws: int, seed: int):
    """Draw ``n_draws`` pairs from ``Q_h``.

    Returns arrays ``x`` (n, p) and ``y`` (n, k).  The standard normal stream
    depends only on ``seed``, so draws at different ``h`` share random numbers.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    law = joint_law(config, h)
    eps = generator(seed).standard_normal((int(n_draws), config.p + config.k))
    v = law.mean + eps @ psd_sqrt(law.cov).T
    return v[:, : config.p], v[:, config.p :]
