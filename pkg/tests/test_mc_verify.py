import math

import numpy as np
import pytest

from frozen import DIVERGENCE_Q2, QMMM
from models import ref1
from qmmm.errors import DomainError, InsufficientPathsError
from qmmm.levy_model import Atoms, LevyTriplet, integrate_k, uniform_density
from qmmm.mc_verify import (InverseCDFTable, check_divergence_mc, check_martingale_mc,
                            density_zT, q_triplet, simulate_paths)
from qmmm.solvers import candidate_solution, phi, solve_qmmm
from qmmm.tilts import EsscherTilt, Identity, PowerTilt

N = 100_000


@pytest.fixture(scope="module")
def sol2():
    return solve_qmmm(ref1(), 2.0)


def test_q_triplet_identity():
    t = ref1()
    tq = q_triplet(t, 0.0, Identity())
    np.testing.assert_array_equal(tq.b, t.b)
    assert tq.K is t.K


def test_q_triplet_ref1_density_and_drift(sol2):
    t = ref1()
    tq = q_triplet(t, sol2.beta, sol2.tilt)
    x = np.linspace(-0.49, 0.49, 7)
    np.testing.assert_allclose(tq.K.pdf(x), 0.5 * (1 + sol2.lam[0] * x), rtol=1e-14)
    # drift of L under Q vanishes at the solution
    mean = tq.b + integrate_k(tq.K, lambda x: x[:, 0] - np.where(np.abs(x[:, 0]) <= 1, x[:, 0], 0))
    np.testing.assert_allclose(mean, phi(t, sol2.lam, 2.0), atol=1e-15)
    assert abs(mean[0]) < 1e-11


def test_q_triplet_atoms():
    t = LevyTriplet(0.0, 0.01, Atoms([[0.5], [-0.25]], [1.0, 2.0]))
    Y = EsscherTilt(0.4)
    tq = q_triplet(t, 0.0, Y)
    np.testing.assert_allclose(tq.K.weights, [math.exp(0.2), 2 * math.exp(-0.1)])


def test_no_jumps_ever():
    b = simulate_paths(LevyTriplet(0.0, 0.04, Atoms.empty(1)), 1000, 1)
    assert b.jump_sizes.shape == (0, 1) and np.all(b.n_jumps == 0)


def test_jump_count_mean():
    b = simulate_paths(ref1(), N, 11)
    se = math.sqrt(0.5 / N)
    assert abs(b.n_jumps.mean() - 0.5) <= 3 * se


def test_jump_sizes_and_times():
    b = simulate_paths(ref1(), 20_000, 2)
    assert np.all(np.abs(b.jump_sizes) < 0.5)
    for i in range(200):
        p = b.path(i)
        assert np.all(np.diff(p.jump_times) > 0) and np.all((p.jump_times > 0) & (p.jump_times <= 1))


def test_determinism_across_threads():
    a = simulate_paths(ref1(), 10_000, 3)
    b = simulate_paths(ref1(), 10_000, 3, n_threads=4)
    np.testing.assert_array_equal(a.brownian, b.brownian)
    np.testing.assert_array_equal(a.jump_sizes, b.jump_sizes)
    # path i depends only on (seed, i)
    c = simulate_paths(ref1(), 5_000, 3)
    np.testing.assert_array_equal(a.offsets[:5001], c.offsets)


def test_inverse_cdf_refined():
    K = uniform_density(-0.3, 0.7, 2.0).tilted(PowerTilt(1.5, 3.0))
    tab = InverseCDFTable.build(K)
    u = np.linspace(0.001, 0.999, 101)
    x = tab.sample(u)
    from scipy import integrate
    F = np.array([integrate.quad(K.pdf, -0.3, v, epsabs=1e-14)[0] for v in x]) / tab.mass
    np.testing.assert_allclose(F, u, atol=1e-10)


def test_density_identity_and_gaussian_only():
    b = simulate_paths(ref1(), 10, 0)
    np.testing.assert_array_equal(density_zT(b, 0.0, Identity(), ref1()), np.ones(10))
    t = LevyTriplet(-0.02, 0.04, Atoms.empty(1))
    b = simulate_paths(t, 10, 0)
    p = b.path(3)
    np.testing.assert_allclose(density_zT(p, 0.5, Identity(), t),
                               math.exp(0.5 * p.brownian[0] - 0.5 * 0.25 * 0.04))


def test_density_positive_and_normalised(sol2):
    t = ref1()
    z = density_zT(simulate_paths(t, N, 5), sol2.beta, sol2.tilt, t)
    assert np.all(z > 0)
    assert abs(z.mean() - 1) <= 3 * z.std(ddof=1) / math.sqrt(N)


def test_density_outside_region():
    t = ref1()
    b = simulate_paths(t, 2000, 0)
    with pytest.raises(DomainError):
        density_zT(b, 0.0, PowerTilt(3.0, 2.0), t)


def test_change_of_measure_jump_counts(sol2):
    t = ref1()
    z = density_zT(simulate_paths(t, N, 8), sol2.beta, sol2.tilt, t)
    nP = simulate_paths(t, N, 8).n_jumps
    nQ = simulate_paths(q_triplet(t, sol2.beta, sol2.tilt), N, 9).n_jumps
    for g in (lambda n: n, lambda n: n**2):
        a, b = z * g(nP), g(nQ).astype(float)
        se = math.hypot(a.std(ddof=1), b.std(ddof=1)) / math.sqrt(N)
        assert abs(a.mean() - b.mean()) <= 3 * se


def test_identity_divergence():
    t = ref1()
    sol = candidate_solution(t, 0.0, Identity(), 2.0)
    rep = check_divergence_mc(t, sol, 1000, 0)
    assert rep.estimate == 1.0 and rep.target == 1.0 and rep.z_score == 0.0


@pytest.mark.parametrize("q", [2.0, 3.0])
def test_divergence_ref1(q):
    t = ref1()
    rep = check_divergence_mc(t, solve_qmmm(t, q), N, 21)
    assert rep.passed, rep
    if q == 2.0:
        np.testing.assert_allclose(rep.target, DIVERGENCE_Q2, rtol=1e-12)


def test_divergence_no_jumps():
    b, c, q = -0.02, 0.04, 3.0
    t = LevyTriplet(b, c, Atoms.empty(1))
    rep = check_divergence_mc(t, solve_qmmm(t, q), N, 4)
    np.testing.assert_allclose(rep.target, math.exp(q * (q - 1) * b * b / (2 * c)), rtol=1e-12)
    assert rep.passed


def test_martingale_modes_agree(sol2):
    t = ref1()
    d = check_martingale_mc(t, sol2, N, 31, "direct")
    w = check_martingale_mc(t, sol2, N, 31, "weighted")
    assert d.passed and w.passed
    assert abs(d.estimate - w.estimate) <= 3 * math.hypot(d.std_error, w.std_error)


def test_martingale_under_p_itself():
    # b = 0 with symmetric jumps: P is already a martingale measure
    t = LevyTriplet(0.0, 0.04, uniform_density(-0.5, 0.5, 0.5))
    sol = candidate_solution(t, 0.0, Identity(), 2.0)
    assert check_martingale_mc(t, sol, N, 3, "direct").passed


def test_power_against_wrong_lambda(sol2):
    t = ref1()
    lam = sol2.lam + 0.3
    bad = candidate_solution(t, lam, PowerTilt(lam, 2.0), 2.0)
    for mode in ("direct", "weighted"):
        assert abs(check_martingale_mc(t, bad, N, 31, mode).z_score) > 3


def test_rerun_guard_marks_report(sol2):
    t = ref1()
    lam = sol2.lam + 0.3
    bad = candidate_solution(t, lam, PowerTilt(lam, 2.0), 2.0)
    rep = check_martingale_mc(t, bad, 10_000, 1)
    assert rep.rerun and rep.seed == 2 and "first_z_score" in rep.extra


def test_single_path_rejected(sol2):
    with pytest.raises(InsufficientPathsError):
        check_divergence_mc(ref1(), sol2, 1, 0)


def test_report_json(sol2):
    import json
    rep = check_divergence_mc(ref1(), sol2, 1000, 0)
    doc = json.loads(rep.to_json())
    assert set(doc) >= {"estimate", "std_error", "target", "z_score", "n_paths", "passed"}
