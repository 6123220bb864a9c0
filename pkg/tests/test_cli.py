import csv
import json

import numpy as np
import pytest
from test_config import PLANAR

from ccsoc.cli import main
from ccsoc.config import bundled_config


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def planar_cfg(tmp_path):
    p = tmp_path / "planar.yml"
    p.write_text(PLANAR)
    return p


@pytest.fixture(scope="module")
def gaussian_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("gaussian")
    code = main(["solve", "--config", str(bundled_config("gaussian_rendezvous")), "--out", str(out)])
    return code, out


def test_solve_gaussian(gaussian_run):
    code, out = gaussian_run
    assert code == 0
    doc = json.loads((out / "solution.json").read_text())
    assert doc["status"] == "converged" and doc["method"] == "proposed"
    assert doc["n_samples"] == 5000 and doc["sample_seed"] == 7
    assert sorted(doc["controls"]) == ["1", "2", "3"]
    assert np.asarray(doc["controls"]["1"]).shape == (5, 3)
    assert max(doc["verification"].values()) <= 1e-6
    rows = _rows(out / "trajectory.csv")
    assert len(rows) == 3 * 6 and list(rows[0]) == ["vehicle", "k", "x", "y", "z", "vx", "vy", "vz"]
    assert (out / "trajectory.png").stat().st_size > 0 and (out / "ccp.png").exists()
    assert json.loads((out / "timing.json").read_text())["solve_time"] > 0


def test_validate_gaussian(gaussian_run, capsys):
    _, out = gaussian_run
    cfg = str(bundled_config("gaussian_rendezvous"))
    assert main(["validate", "--config", cfg, "--out", str(out), "--trials", "4000"]) == 0
    body = json.loads((out / "validation.json").read_text())
    assert body["passed"] and body["trials"] == 4000
    assert "Avoid each other" in capsys.readouterr().out
    assert [r["group"] for r in _rows(out / "validation.csv")] == ["target", "obstacle", "pairwise"]


def test_validate_rejects_other_config(gaussian_run, planar_cfg, capsys):
    _, out = gaussian_run
    code = main(["validate", "--config", str(planar_cfg), "--solution", str(out / "solution.json"),
                 "--out", str(planar_cfg.parent)])
    assert code == 2
    assert "hash mismatch" in capsys.readouterr().err


def test_solution_file_is_deterministic(planar_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["solve", "--config", str(planar_cfg), "--out", str(a), "--no-figures"]) == 0
    assert main(["solve", "--config", str(planar_cfg), "--out", str(b), "--no-figures"]) == 0
    assert (a / "solution.json").read_bytes() == (b / "solution.json").read_bytes()
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
    assert not (a / "trajectory.png").exists()


def test_single_vehicle_run(tmp_path):
    text = PLANAR.replace("  - {id: 2, x0: [6, -0.5, 0, 0]}\n", "").replace(
        "  - {vehicle: 2, k: [4], box: {center: [-6, 0, 0, 0], half_width: [1, 1, 1, 1]}}\n", "")
    p = tmp_path / "one.yml"
    p.write_text(text)
    assert main(["solve", "--config", str(p), "--out", str(tmp_path), "--no-figures"]) == 0
    doc = json.loads((tmp_path / "solution.json").read_text())
    assert list(doc["controls"]) == ["1"]
    assert not any(c["kind"] == "pairwise" for c in doc["collision"])


def test_risk_below_floor_exits_4(tmp_path, capsys):
    text = PLANAR.replace("alpha: 0.1", "alpha: 0.0001").replace("count: 400", "count: 100")
    p = tmp_path / "tight.yml"
    p.write_text(text)
    assert main(["solve", "--config", str(p), "--out", str(tmp_path)]) == 4
    err = capsys.readouterr().err
    assert "floor" in err and "need N_s >= 160000" in err


def test_malformed_config_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.yml"
    p.write_text(PLANAR.replace("[0, 1, 0, 1], [0, 0", "[0, 1, 0], [0, 0"))
    assert main(["solve", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "bad.yml:3: system.A[1]" in capsys.readouterr().err


def test_infeasible_config_exits_3(tmp_path):
    p = tmp_path / "weak.yml"
    p.write_text(PLANAR.replace("lower: [-3, -3], upper: [3, 3]", "lower: [-1e-5, -1e-5], upper: [1e-5, 1e-5]"))
    assert main(["solve", "--config", str(p), "--out", str(tmp_path), "--no-figures"]) == 3


def test_unknown_solver_exits_5(tmp_path):
    p = tmp_path / "solver.yml"
    p.write_text(PLANAR + "backend: {solver: NOT_A_SOLVER}\n")
    assert main(["solve", "--config", str(p), "--out", str(tmp_path), "--no-figures"]) == 5


def test_baseline_method_restrictions(planar_cfg, tmp_path, capsys):
    assert main(["solve", "--config", str(planar_cfg), "--out", str(tmp_path), "--method", "scenario"]) == 2
    assert "target-set constraints only" in capsys.readouterr().err
    los = str(bundled_config("los_rendezvous"))
    assert main(["solve", "--config", los, "--out", str(tmp_path), "--method", "cantelli"]) == 2


def test_cantelli_method(planar_cfg, tmp_path):
    assert main(["solve", "--config", str(planar_cfg), "--out", str(tmp_path), "--method", "cantelli",
                 "--no-figures"]) == 0
    doc = json.loads((tmp_path / "solution.json").read_text())
    assert doc["method"] == "cantelli" and doc["n_samples"] is None


def test_gen_samples(tmp_path):
    cfg = str(bundled_config("gaussian_rendezvous"))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen-samples", "--config", cfg, "--out", str(a)]) == 0
    assert main(["gen-samples", "--config", cfg, "--out", str(b)]) == 0
    for v in (1, 2, 3):
        data = (a / f"samples_v{v}.csv").read_text().splitlines()
        assert len(data) == 5001 and data[0].split(",")[0] == "w_t0_d1"
        assert (a / f"samples_v{v}.csv").read_bytes() == (b / f"samples_v{v}.csv").read_bytes()
    assert main(["gen-samples", "--config", cfg, "--out", str(a), "--count", "1"]) == 2


def test_bound_check_table(tmp_path):
    assert main(["bound-check", "--samples", "10,100,1000", "--lambdas", "1:10000:100",
                 "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "bound_table.csv")
    assert (tmp_path / "bound_curves.png").exists()
    for ns in (10, 100, 1000):
        mine = [r for r in rows if int(r["n_samples"]) == ns]
        assert sum(r["marker"] == "convexity_threshold" for r in mine) == 1
        tail = sorted((float(r["lambda"]), float(r["f"]) - float(r["floor"])) for r in mine)
        gaps = [g for lam, g in tail if lam >= 1.0]
        # far in the tail the bound settles onto its floor from above
        assert all(g > 0 for g in gaps) and all(np.diff(gaps) < 0)
        assert gaps[-1] < 0.01 * float(mine[0]["floor"])
        assert float(mine[0]["floor"]) == pytest.approx(1 / (ns + 1))


def test_bound_check_empirical(tmp_path):
    assert main(["bound-check", "--samples", "10", "--lambdas", "0.5,1", "--empirical", "gaussian",
                 "--trials", "10000", "--out", str(tmp_path), "--no-figures"]) == 0
    rows = _rows(tmp_path / "tail_tests.csv")
    assert len(rows) == 4 and all(r["pass"] == "True" for r in rows)


def test_bound_check_usage_errors(tmp_path):
    assert main(["bound-check", "--samples", "1", "--out", str(tmp_path)]) == 2
    assert main(["bound-check", "--samples", "10", "--empirical", "cauchy", "--out", str(tmp_path),
                 "--no-figures"]) == 2
    assert main(["bound-check", "--samples", "10", "--empirical", "--trials", "100", "--out", str(tmp_path),
                 "--no-figures"]) == 2
