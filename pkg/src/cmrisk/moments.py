"""Centered Gaussian moment vectors.

The moment vector stacks ``prod_s y_s^{m_s} - E[prod_s xi_s^{m_s}]`` over all
multi-indices ``1 <= |m| <= M`` with ``xi ~ N(0, Omega)``.  Components are
ordered graded-lexicographically: by total order, then lexicographically
descending in the exponent tuple, so ``(1,0)`` precedes ``(0,1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np

M_MAX = 8


class UnsupportedOrderError(ValueError):
    """Requested moment order exceeds ``M_MAX``."""


def enumerate_multi_indices(k: int, M: int) -> list[tuple[int, ...]]:
    """All ``m`` in ``N_0^k`` with ``1 <= |m| <= M`` in graded lex order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if M < 0:
        raise ValueError("M must be >= 0")
    out: list[tuple[int, ...]] = []
    for order in range(1, M + 1):
        level = []
        for combo in combinations_with_replacement(range(k), order):
            m = [0] * k
            for s in combo:
                m[s] += 1
            level.append(tuple(m))
        # combinations_with_replacement already yields descending-lex exponents
        out.extend(sorted(level, reverse=True))
    return out


def _coords(m) -> tuple[int, ...]:
    return tuple(s for s, e in enumerate(m) for _ in range(int(e)))


def gaussian_central_moment(omega, m) -> float:
    """``E[prod_s xi_s^{m_s}]`` for ``xi ~ N(0, omega)`` via Isserlis pairings.

    Parameters
    ----------
    omega : array_like, shape (k, k)
        Covariance matrix.
    m : sequence of int
        Exponents, ``|m| <= M_MAX``.

    Raises
    ------
    UnsupportedOrderError
        If ``|m| > M_MAX``.
    """
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    m = tuple(int(e) for e in m)
    if len(m) != omega.shape[0]:
        raise ValueError(f"multi-index length {len(m)} does not match k={omega.shape[0]}")
    if any(e < 0 for e in m):
        raise ValueError("exponents must be nonnegative")
    order = sum(m)
    if order > M_MAX:
        raise UnsupportedOrderError(f"moment order {order} exceeds supported maximum {M_MAX}")
    if order % 2:
        return 0.0

    @lru_cache(maxsize=None)
    def pairings(coords: tuple[int, ...]) -> float:
        if not coords:
            return 1.0
        first, rest = coords[0], coords[1:]
        total = 0.0
        # group equal partners: identical coordinates give identical sub-sums
        seen: dict[int, int] = {}
        for j, c in enumerate(rest):
            seen.setdefault(c, j)
        for c, j in seen.items():
            mult = rest.count(c)
            sub = rest[:j] + rest[j + 1 :]
            total += mult * omega[first, c] * pairings(sub)
        return total

    return float(pairings(_coords(m)))


@dataclass(frozen=True)
class MomentVectorSpec:
    """Multi-indices (rows of ``indices``) and their Gaussian centering targets."""

    indices: np.ndarray  # (b, k) int
    targets: np.ndarray  # (b,)
    M: int
    k: int

    @property
    def b(self) -> int:
        return self.indices.shape[0]

    @property
    def orders(self) -> np.ndarray:
        return self.indices.sum(axis=1)


def build_moment_spec(omega, M: int) -> MomentVectorSpec:
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    k = omega.shape[0]
    if M > M_MAX:
        raise UnsupportedOrderError(f"M={M} exceeds supported maximum {M_MAX}")
    idx = enumerate_multi_indices(k, M)
    indices = np.array(idx, dtype=int).reshape(len(idx), k)
    targets = np.array([gaussian_central_moment(omega, m) for m in idx], dtype=float)
    indices.setflags(write=False)
    targets.setflags(write=False)
    return MomentVectorSpec(indices=indices, targets=targets, M=int(M), k=k)


def monomials(indices: np.ndarray, y) -> np.ndarray:
    """Raw monomials ``prod_s y_s^{m_s}``; ``y`` has shape (..., k)."""
    y = np.asarray(y, dtype=float)
    if indices.shape[0] == 0:
        return np.zeros(y.shape[:-1] + (0,))
    return np.prod(y[..., None, :] ** indices, axis=-1)


def w_vector(spec: MomentVectorSpec, y_h) -> np.ndarray:
    """Centered moment vector at ``y_h = Y + Psi h``; batch axes allowed."""
    y_h = np.asarray(y_h, dtype=float)
    if spec.k == 1 and (y_h.ndim == 0):
        y_h = y_h[None]
    if y_h.shape[-1] != spec.k:
        raise ValueError(f"y_h must have trailing dimension {spec.k}, got {y_h.shape}")
    return monomials(spec.indices, y_h) - spec.targets
