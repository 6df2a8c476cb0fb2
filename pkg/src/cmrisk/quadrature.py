"""Gaussian integration: Gauss-Hermite tensor grids with a seeded MC fallback."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_hermitenorm

from .experiment import generator

WEIGHT_FLOOR = 1e-30


@dataclass(frozen=True)
class IntegratorSettings:
    """Integration and solver controls.

    Attributes
    ----------
    nodes : int
        Gauss-Hermite nodes per Gaussian dimension.
    mc_draws : int
        Monte Carlo draws when the reduced dimension exceeds ``max_gh_dim``.
    seed : int
        Seed of the MC stream; reused for every evaluation in one solve.
    tol : float
        Gradient-norm tolerance of Newton solves.
    max_gh_dim : int
        Largest dimension integrated by tensor Gauss-Hermite.
    max_iter : int
        Newton iteration budget.
    """

    nodes: int = 128
    mc_draws: int = 1_000_000
    seed: int = 0
    tol: float = 1e-8
    max_gh_dim: int = 3
    max_iter: int = 100

    def __post_init__(self):
        if self.nodes < 2:
            raise ValueError("nodes must be >= 2")
        if self.mc_draws < 1:
            raise ValueError("mc_draws must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@lru_cache(maxsize=32)
def gh_standard(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for ``E f(xi)``, ``xi ~ N(0, 1)``."""
    t, w = roots_hermitenorm(n)
    w = w / np.sqrt(2.0 * np.pi)
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


def standard_nodes(dim: int, settings: IntegratorSettings) -> tuple[np.ndarray, np.ndarray, str]:
    """Nodes (n, dim) and weights (n,) for a standard normal in ``dim`` dimensions."""
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1), "exact"
    if dim <= settings.max_gh_dim:
        return (*_tensor_gh(dim, settings.nodes), "gauss-hermite")
    eps = generator(settings.seed).standard_normal((settings.mc_draws, dim))
    return eps, np.full(settings.mc_draws, 1.0 / settings.mc_draws), "monte-carlo"


@lru_cache(maxsize=16)
def _tensor_gh(dim: int, n: int):
    t, w = gh_standard(n)
    if dim == 1:
        keep = w > WEIGHT_FLOOR
        return t[keep, None], w[keep]
    grids = np.meshgrid(*([t] * dim), indexing="ij")
    wgrid = np.ones_like(grids[0])
    for ws in np.meshgrid(*([w] * dim), indexing="ij"):
        wgrid = wgrid * ws
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = wgrid.ravel()
    keep = weights > WEIGHT_FLOOR
    nodes, weights = nodes[keep], weights[keep]
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def low_rank_factor(cov: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Factor ``F`` (n, r) with ``F F' = cov`` dropping null directions."""
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    top = max(vals.max(initial=0.0), 0.0)
    keep = vals > rtol * max(top, 1e-300)
    if top == 0.0:
        return np.zeros((cov.shape[0], 0))
    return vecs[:, keep] * np.sqrt(vals[keep])


def gaussian_nodes(mean, cov, settings: IntegratorSettings):
    """Integration nodes for ``N(mean, cov)`` after rank reduction.

    Returns ``(points, weights, method)`` with ``points`` of shape (n, dim).
    """
    mean = np.asarray(mean, dtype=float)
    factor = low_rank_factor(np.atleast_2d(cov))
    eps, w, method = standard_nodes(factor.shape[1], settings)
    return mean + eps @ factor.T, w, method

