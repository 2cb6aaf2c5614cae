import csv
import io
import json

import numpy as np
import pytest
from scipy import integrate

from frozen import QMMM
from models import ref1
from qmmm.convergence import convergence_diagnostics, default_grid, q_sweep
from qmmm.errors import InsufficientRowsError
from qmmm.levy_model import Atoms, LevyTriplet, uniform_density
from qmmm.tilts import tilt_eval, PowerTilt


@pytest.fixture(scope="module")
def sweep():
    return q_sweep(ref1())


def test_default_grid():
    g = default_grid()
    assert len(g) == 9 and g[0] == 1.5 and g[-1] == 1 + 0.5 / 256


def test_rows_sorted_and_solved(sweep):
    qs = [r.q for r in sweep.rows]
    assert qs == sorted(qs, reverse=True)
    assert all(r.ok and r.residual <= 1e-11 for r in sweep.rows)
    assert all(r.H >= -1e-12 for r in sweep.rows)


def test_ref1_passes(sweep):
    verdict = convergence_diagnostics(sweep)
    assert verdict.passed, verdict.reasons
    assert sweep.diagnostics["H_decay_exponent"] == pytest.approx(2.0, abs=0.05)


def test_frozen_value_in_sweep():
    rep = q_sweep(ref1(), [1.5, 1.1, 1.01])
    for r in rep.rows:
        np.testing.assert_allclose(r.lam, [QMMM[r.q][0]], rtol=1e-10)
        np.testing.assert_allclose(r.H, QMMM[r.q][2], rtol=1e-6)


def test_warm_and_cold_agree(sweep):
    cold = q_sweep(ref1(), warm=False, n_threads=3)
    for a, b in zip(sweep.rows, cold.rows):
        np.testing.assert_allclose(a.lam, b.lam, atol=1e-9)


def test_probe_ratio_is_tilt(sweep):
    for i, r in enumerate(sweep.rows):
        for j, x in enumerate(sweep.probes):
            assert sweep.density_ratio[i, j] == tilt_eval(PowerTilt(r.lam, r.q), x)


def test_entropy_gap_against_scipy(sweep):
    lam_e = sweep.lam_e[0]
    for r in sweep.rows[::3]:
        lq, q = r.lam[0], r.q

        def f(x):
            yq = (1 + (q - 1) * lq * x) ** (1 / (q - 1))
            return ((np.log(yq) - lam_e * x) * yq - (yq - np.exp(lam_e * x))) * 0.5

        jump = integrate.quad(f, -0.5, 0.5, epsabs=1e-15, epsrel=1e-13, limit=200)[0]
        np.testing.assert_allclose(r.H, 0.02 * (lq - lam_e) ** 2 + jump, atol=1e-8)


def test_shuffled_rows_fail(sweep):
    rows = list(sweep.rows)
    sweep.rows = rows[::-1]
    try:
        assert not convergence_diagnostics(sweep).passed
    finally:
        sweep.rows = rows


def test_no_jumps_trivial():
    rep = q_sweep(LevyTriplet(-0.02, 0.04, Atoms.empty(1)))
    assert convergence_diagnostics(rep).passed
    assert all(abs(r.H) == 0.0 for r in rep.rows)
    np.testing.assert_allclose([r.lam[0] for r in rep.rows], 0.5, rtol=1e-12)


def test_zero_drift_all_zero():
    rep = q_sweep(LevyTriplet(0.0, 0.04, uniform_density(-0.5, 0.5, 0.5)))
    assert rep.lam_e[0] == 0.0
    assert all(r.lam[0] == 0.0 and r.H == 0.0 for r in rep.rows)


def test_insufficient_rows():
    with pytest.raises(InsufficientRowsError):
        convergence_diagnostics(q_sweep(ref1(), [1.5, 1.2]))


def test_failed_row_recorded():
    # drift too large for bounded jumps without diffusion to offset
    t = LevyTriplet(0.3, 0.0, uniform_density(-0.5, 0.5, 0.5))
    rep = q_sweep(t, [3.0, 2.0, 1.5])
    assert any(not r.ok for r in rep.rows)
    assert rep.warnings


def test_serialisation(sweep):
    rows = list(csv.reader(io.StringIO(sweep.to_csv())))
    assert rows[0] == ["q", "lambda", "residual", "k_q", "divergence", "H"]
    assert len(rows) == 10
    assert float(rows[1][1]) == sweep.rows[0].lam[0]
    doc = json.loads(sweep.to_json())
    assert len(doc["probes"]) == 5 and len(doc["rows"]) == 9
