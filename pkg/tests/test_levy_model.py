import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frozen import SECOND_MOMENT
from models import ref1
from qmmm.errors import NonFiniteError, ParseError
from qmmm.levy_model import (Atoms, LevyTriplet, drift_b0, exp_to_se, integrate_k,
                             lambda_domain, measure_from_dict, model_from_dict, model_to_dict,
                             parse_model, tabulated_density, truncated_double_exponential_density,
                             truncation, uniform_density, validate)


def test_truncation_rowwise():
    x = np.array([[0.5, 0.1], [2.0, 0.0], [-1.0, 0.0]])
    np.testing.assert_array_equal(truncation(x), [[0.5, 0.1], [0, 0], [-1.0, 0.0]])


def test_ref1_moments():
    K = ref1().K
    np.testing.assert_allclose(K.total_mass(), 0.5, rtol=1e-14)
    np.testing.assert_allclose(integrate_k(K, lambda x: x[:, 0] ** 2), SECOND_MOMENT, rtol=1e-13)
    np.testing.assert_allclose(integrate_k(K, lambda x: x[:, 0]), 0.0, atol=1e-16)


def test_atoms_exact_sum():
    K = Atoms([[0.5], [-0.25]], [1.0, 2.0])
    assert integrate_k(K, lambda x: x[:, 0] ** 2) == 0.25 + 2 * 0.0625


def test_empty_atoms_integrate_to_zero():
    K = Atoms.empty(2)
    np.testing.assert_array_equal(integrate_k(K, lambda x: x), [0.0, 0.0])


def test_nan_integrand_raises():
    with pytest.raises(NonFiniteError):
        integrate_k(Atoms([[0.5]], [1.0]), lambda x: np.full(x.shape[0], np.nan))


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 4))
def test_integrate_k_linear(a, b, p):
    K = truncated_double_exponential_density(4.0, 6.0, 0.4, 1.3, -0.7, 0.8)
    f = lambda x: np.sin(x[:, 0])
    g = lambda x: x[:, 0] ** p
    lhs = integrate_k(K, lambda x: a * f(x) + b * g(x))
    rhs = a * integrate_k(K, f) + b * integrate_k(K, g)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_double_exponential_intensity():
    K = truncated_double_exponential_density(3.0, 5.0, 0.3, 0.8, -0.6, 0.9)
    np.testing.assert_allclose(K.total_mass(), 0.8, rtol=1e-12)


def test_tabulated_density():
    K = tabulated_density([-0.5, 0.0, 0.5], [0.0, 2.0, 0.0])
    np.testing.assert_allclose(K.total_mass(), 1.0, rtol=1e-13)


def test_drift_b0_inside_unit_ball_equals_b():
    np.testing.assert_allclose(drift_b0(ref1()), [-0.02])


def test_drift_b0_large_jumps():
    t = LevyTriplet(0.1, 0.0, Atoms([[2.0], [0.5]], [0.3, 1.0]))
    np.testing.assert_allclose(drift_b0(t), [0.1 + 0.3 * 2.0])


def test_exp_to_se_atoms():
    t = exp_to_se(0.05, 0.04, Atoms([[math.log(1.5)]], [2.0]))
    np.testing.assert_allclose(t.K.locations, [[0.5]])
    # h(e^x - 1) - h(x) vanishes for small jumps, so b = b~ + c/2
    np.testing.assert_allclose(t.b, [0.05 + 0.02 + 2.0 * (0.5 - math.log(1.5))])


def test_exp_to_se_no_jumps():
    t = exp_to_se(0.01, 0.09, Atoms.empty(1))
    np.testing.assert_allclose(t.b, [0.01 + 0.045])


def test_exp_to_se_density_mass_preserved():
    t = exp_to_se(0.0, 0.0, uniform_density(-0.3, 0.4, 0.7))
    np.testing.assert_allclose(t.K.total_mass(), 0.7, rtol=1e-12)
    np.testing.assert_allclose([t.K.lo, t.K.hi], [math.expm1(-0.3), math.expm1(0.4)])


@pytest.mark.parametrize("K, code", [
    (Atoms([[-1.2]], [1.0]), "SUPPORT_OUTSIDE"),
    (Atoms([[0.0]], [1.0]), "ATOM_AT_ORIGIN"),
    (Atoms([[0.3]], [-1.0]), "NEGATIVE_WEIGHT"),
])
def test_validation_codes(K, code):
    rep = validate(LevyTriplet(0.0, 0.04, K))
    assert not rep.passed and code in rep.codes()


def test_validation_bad_c():
    rep = validate(LevyTriplet([0.0, 0.0], [[0.04, 0.0], [0.0, -0.1]], Atoms.empty(2)))
    assert "C_NOT_PSD" in rep.codes()


def test_validation_ref1_passes():
    assert validate(ref1()).passed


def test_lambda_domain_ref1():
    dom = lambda_domain(ref1().K, 2.0)
    np.testing.assert_allclose([dom.lo, dom.hi], [-2.0, 2.0])


def test_lambda_domain_asymmetric_support():
    dom = lambda_domain(uniform_density(-0.5, 2.0, 1.0), 1.5)
    np.testing.assert_allclose([dom.lo, dom.hi], [-1.0, 4.0])


def test_lambda_domain_negative_q():
    # (q-1) = -2: need 1 - 2 lam x > 0 on (-0.5, 0.5)
    dom = lambda_domain(ref1().K, -1.0)
    np.testing.assert_allclose([dom.lo, dom.hi], [-1.0, 1.0])


def test_lambda_domain_polytope():
    K = Atoms([[0.5, 0.0], [0.0, -0.25]], [1.0, 1.0])
    dom = lambda_domain(K, 2.0)
    assert dom.contains([-1.9, 3.9]) and not dom.contains([-2.1, 0.0])


def test_model_roundtrip():
    t = ref1()
    back = model_from_dict(model_to_dict(t))
    np.testing.assert_array_equal(back.b, t.b)
    assert back.K.family == "uniform"
    np.testing.assert_allclose(back.K.total_mass(), 0.5)


@pytest.mark.parametrize("text", ['{"d": 1,', '[1, 2]', '{"d": 1, "b": [NaN], "c": [[0.1]], '
                                  '"T": 1, "K": {"type": "atoms", "atoms": []}}'])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse_model(text)


def test_measure_from_dict_unknown_family():
    with pytest.raises(ParseError):
        measure_from_dict({"type": "density", "family": "gamma"}, 1)
