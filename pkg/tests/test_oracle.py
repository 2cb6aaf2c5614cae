import numpy as np
import pytest

from qmmm.errors import DomainError, InfeasibleError
from qmmm.levy_model import Atoms, LevyTriplet, uniform_density
from qmmm.oracle import MAX_ATOMS, is_feasible, oracle_pq_atoms, sample_feasible
from qmmm.solvers import solve_qmmm
from qmmm.tilts import FunctionTilt, k_q


def two_atom():
    return LevyTriplet(-0.01, 0.01, Atoms([[0.5], [-0.25]], [1.0, 2.0]))


@pytest.mark.parametrize("q", [1.5, 2.0, 3.0])
def test_matches_newton(q):
    t = two_atom()
    orc = oracle_pq_atoms(t, q)
    sol = solve_qmmm(t, q)
    assert abs(orc.k - sol.k_value) <= 1e-10
    np.testing.assert_allclose(orc.y, sol.tilt(t.K.locations), atol=1e-8)
    np.testing.assert_allclose(orc.beta, sol.lam, atol=1e-8)


def test_random_feasible_points_do_not_beat_oracle():
    t = two_atom()
    orc = oracle_pq_atoms(t, 2.0)
    rng = np.random.default_rng(5)
    for beta, y in sample_feasible(t, rng, 50):
        Y = FunctionTilt(lambda x, y=y: np.where(x[:, 0] > 0, y[0], y[1]))
        assert k_q(t, beta, Y, 2.0) >= orc.k - 1e-12


def test_infeasible():
    t = LevyTriplet(1.0, 0.0, Atoms([[0.5], [0.25]], [1.0, 2.0]))
    assert not is_feasible(t)
    with pytest.raises(InfeasibleError):
        oracle_pq_atoms(t, 2.0)


def test_atom_limit():
    x = np.linspace(-0.5, 0.5, MAX_ATOMS + 2)
    x = x[x != 0][: MAX_ATOMS + 1, None]
    t = LevyTriplet(0.0, 0.01, Atoms(x, np.ones(x.shape[0])))
    with pytest.raises(DomainError, match="atom limit"):
        oracle_pq_atoms(t, 2.0)


def test_density_rejected():
    with pytest.raises(DomainError):
        oracle_pq_atoms(LevyTriplet(0.0, 0.01, uniform_density(-0.5, 0.5, 1.0)), 2.0)
