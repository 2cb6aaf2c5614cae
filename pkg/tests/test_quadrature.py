import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from qmmm.quadrature import adaptive_gk


def test_polynomial_exact():
    res = adaptive_gk(lambda x: 3 * x**2, 0.0, 2.0)
    assert res.converged
    np.testing.assert_allclose(res.value, 8.0, rtol=1e-14)


def test_vector_valued():
    res = adaptive_gk(lambda x: np.stack([np.sin(x), np.cos(x)], axis=1), 0.0, math.pi)
    np.testing.assert_allclose(res.value, [2.0, 0.0], atol=1e-12)


def test_kink_with_breakpoint():
    res = adaptive_gk(lambda x: np.abs(x - 0.3), -1.0, 1.0, points=[0.3])
    np.testing.assert_allclose(res.value, 0.5 * (1.3**2 + 0.7**2), rtol=1e-13)


def test_integrable_endpoint_singularity_refines():
    res = adaptive_gk(lambda x: 1 / np.sqrt(x), 0.0, 1.0, tol=1e-8)
    assert not res.divergent
    np.testing.assert_allclose(res.value, 2.0, rtol=1e-6)


def test_nonintegrable_flagged_divergent():
    res = adaptive_gk(lambda x: 1 / x, 0.0, 1.0)
    assert not res.converged and res.divergent


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 4), st.floats(-2, 2))
def test_matches_scipy_quad(a, width, w):
    f = lambda x: np.exp(w * x) * np.cos(3 * x)
    ours = adaptive_gk(f, a, a + width).value
    ref = integrate.quad(lambda x: math.exp(w * x) * math.cos(3 * x), a, a + width,
                         epsabs=1e-13, epsrel=1e-13)[0]
    np.testing.assert_allclose(ours, ref, atol=1e-10)
