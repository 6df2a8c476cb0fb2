import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logsumexp

from cmrisk import kernels
from cmrisk.kernels import log_inner_compiled, log_inner_python


def dense_log_inner(y, m, s, kk, psi, knots, values, sl, sr, lam, n=400_001, width=14.0):
    """``log E exp((kk x + g(y + psi x))^2/lam)`` on a dense trapezoid grid."""
    u = np.linspace(-width, width, n)
    out = []
    for yi, mi in zip(y, m):
        x = mi + s * u
        z = yi + psi * x
        g = np.interp(z, knots, values)
        g = np.where(z < knots[0], values[0] + sl * (z - knots[0]), g)
        g = np.where(z > knots[-1], values[-1] + sr * (z - knots[-1]), g)
        e = (kk * x + g) ** 2 / lam - 0.5 * u * u
        out.append(logsumexp(e) + np.log(u[1] - u[0]) - 0.5 * np.log(2 * np.pi))
    return np.array(out)


ST = (np.array([-0.5, 0.5]), np.array([0.0, 0.0]), 1.0, 1.0)


@pytest.mark.parametrize("lam", [1.5, 4.0, 20.0])
def test_python_kernel_against_dense_grid(lam):
    y = np.linspace(-4, 4, 9)
    m = 0.5 * y
    args = (y, m, np.sqrt(0.5), 1.0, -1.0, *ST, lam)
    np.testing.assert_allclose(log_inner_python(*args), dense_log_inner(*args), atol=1e-7)


def test_convex_pieces_and_unbounded_tails():
    # slope-zero tails on a small lam make the outer pieces diverge
    y = np.array([0.0, 1.0])
    args = (y, 0.5 * y, np.sqrt(0.5), 1.0, -1.0, np.array([-1.0, 1.0]), np.array([0.0, 0.0]), 0.0, 0.0, 0.9)
    assert np.all(np.isposinf(log_inner_python(*args)))
    # convex exponent on a finite piece only
    args = (y, 0.5 * y, np.sqrt(0.5), 1.0, -1.0, np.array([-1.0, 1.0]), np.array([-2.0, 2.0]), 1.0, 1.0, 0.8)
    np.testing.assert_allclose(log_inner_python(*args), dense_log_inner(*args), atol=1e-7)


@pytest.mark.skipif(log_inner_compiled is None, reason="compiled kernel not built")
@given(st.integers(0, 100_000), st.floats(0.3, 50.0))
def test_backends_agree(seed, lam):
    rng = np.random.default_rng(seed)
    n_knots = int(rng.integers(2, 30))
    knots = np.sort(rng.uniform(-5, 5, n_knots)) + np.arange(n_knots) * 1e-3
    values = rng.normal(0, 1, n_knots)
    y = rng.normal(0, 2, 16)
    args = (y, 0.5 * y, float(rng.uniform(0.1, 1.0)), 1.0, -1.0, knots, values,
            float(rng.uniform(0, 1)), float(rng.uniform(0, 1)), lam)
    a, b = log_inner_python(*args), np.asarray(log_inner_compiled(*args))
    fin = np.isfinite(a)
    np.testing.assert_array_equal(fin, np.isfinite(b))
    np.testing.assert_allclose(a[fin], b[fin], rtol=1e-11, atol=1e-11)


def test_backend_flag():
    assert kernels.BACKEND in ("compiled", "python")
