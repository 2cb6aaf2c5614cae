import json

import numpy as np
import pytest

from frozen import QMMM, REF1
from qmmm.cli import dumps17, main
from qmmm.levy_model import model_from_dict
from qmmm.solvers import phi


def write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(p)


@pytest.fixture
def ref1_file(tmp_path):
    return write(tmp_path, "ref1.json", {
        "d": 1, "b": [REF1["b"]], "c": [[REF1["c"]]], "T": 1.0,
        "K": {"type": "density", "family": "uniform", "lo": -0.5, "hi": 0.5, "intensity": 0.5}})


def atoms_doc(atoms, b=-0.01, c=0.01):
    return {"d": 1, "b": [b], "c": [[c]], "T": 1.0,
            "K": {"type": "atoms", "atoms": [{"x": [x], "w": w} for x, w in atoms]}}


def test_validate_ok(ref1_file):
    assert main(["validate", "--model", ref1_file]) == 0


def test_validate_bad_support(tmp_path, capsys):
    path = write(tmp_path, "bad.json", atoms_doc([(-1.2, 1.0)]))
    assert main(["validate", "--model", path]) == 1
    assert "SUPPORT_OUTSIDE" in capsys.readouterr().out


def test_malformed_json(tmp_path):
    assert main(["validate", "--model", write(tmp_path, "m.json", '{"d": 1,')]) == 2


def test_missing_file(tmp_path):
    assert main(["validate", "--model", str(tmp_path / "nope.json")]) == 2


def test_solve_roundtrip(ref1_file, tmp_path, capsys):
    out = tmp_path / "sol.json"
    assert main(["solve", "--model", ref1_file, "--q", "2", "--out", str(out)]) == 0
    assert "0.244898" in capsys.readouterr().out
    doc = json.loads(out.read_text())
    lam = doc["solution"]["lambda"]
    np.testing.assert_allclose(lam, [QMMM[2.0][0]], rtol=1e-14)
    assert abs(phi(model_from_dict(doc["model"]), lam, doc["solution"]["q"])[0]) <= 1e-11


def test_solve_memm_and_vmmm(ref1_file, capsys):
    assert main(["solve", "--model", ref1_file, "--kind", "memm"]) == 0
    assert "0.244711" in capsys.readouterr().out
    assert main(["solve", "--model", ref1_file, "--kind", "vmmm"]) == 0
    assert "lambda_2 = -lambda_SC" in capsys.readouterr().out


def test_solve_zero_drift(tmp_path, capsys):
    path = write(tmp_path, "z.json", atoms_doc([(0.5, 1.0), (-0.5, 1.0)], b=0.0))
    assert main(["solve", "--model", path, "--q", "2"]) == 0
    assert "Q_q = P" in capsys.readouterr().out


def test_solve_no_root(tmp_path, capsys):
    path = write(tmp_path, "n.json", atoms_doc([(0.5, 1.0)], b=1.0, c=0.0))
    assert main(["solve", "--model", path, "--q", "2"]) == 3
    assert "(C_q) not satisfied" in capsys.readouterr().err


def test_sweep(ref1_file, tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--model", ref1_file, "--format", "csv", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "q,lambda,residual,k_q,divergence,H"
    assert main(["sweep", "--model", ref1_file, "--grid", "geometric:1.5,5",
                 "--probes=-0.25,0,0.25"]) == 0


def test_sweep_no_jumps(tmp_path):
    path = write(tmp_path, "k0.json", {"d": 1, "b": [-0.02], "c": [[0.04]], "T": 1.0,
                                       "K": {"type": "atoms", "atoms": []}})
    assert main(["sweep", "--model", path]) == 0


def test_sweep_one_point(ref1_file):
    assert main(["sweep", "--model", ref1_file, "--grid", "1.5"]) == 5


def test_verify(ref1_file, tmp_path):
    out = tmp_path / "v.json"
    assert main(["verify", "--model", ref1_file, "--n-paths", "100000", "--seed", "3",
                 "--out", str(out)]) == 0
    assert json.loads(out.read_text())["passed"] is True


def test_verify_corrupted_lambda(ref1_file):
    lam = QMMM[2.0][0] + 0.3
    assert main(["verify", "--model", ref1_file, "--lambda-override", repr(lam)]) == 6


def test_verify_single_path(ref1_file):
    assert main(["verify", "--model", ref1_file, "--n-paths", "1"]) == 5


def test_oracle_two_atoms(tmp_path):
    path = write(tmp_path, "a.json", atoms_doc([(0.5, 1.0), (-0.25, 2.0)]))
    assert main(["oracle", "--model", path, "--q", "3"]) == 0


def test_oracle_infeasible(tmp_path):
    path = write(tmp_path, "i.json", atoms_doc([(0.5, 1.0), (0.25, 2.0)], b=1.0, c=0.0))
    assert main(["oracle", "--model", path]) == 3


def test_oracle_atom_limit(tmp_path, capsys):
    xs = [(-0.6 + 0.09 * i) for i in range(14)]
    path = write(tmp_path, "l.json", atoms_doc([(x, 1.0) for x in xs if abs(x) > 1e-9][:13]))
    assert main(["oracle", "--model", path]) == 2
    assert "atom limit" in capsys.readouterr().err


def test_dumps17_digits():
    text = dumps17({"x": 0.1, "v": [1.0 / 3.0], "n": None, "ok": True})
    assert '"x": 0.10000000000000001' in text
    assert json.loads(text)["v"][0] == 1.0 / 3.0
