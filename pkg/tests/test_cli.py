import subprocess
import sys

import pytest

from smaflow.cli import main
from smaflow.config import scenario_text

SMALL = scenario_text().replace("nx = 32", "nx = 6").replace("ny = 32", "ny = 6")


@pytest.fixture
def small_toml(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def test_validate_good(small_toml, capsys):
    assert main(["validate", str(small_toml)]) == 0
    assert "ok" in capsys.readouterr().out


def test_validate_bad(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[material]\nbeta1 = 2.0\n")
    assert main(["validate", "--config", str(bad)]) == 1
    assert "beta1 >= 4" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert main(["validate", str(tmp_path / "nope.toml")]) == 1


def test_unknown_flag(small_toml, capsys):
    assert main(["run", str(small_toml), "--frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand():
    assert main(["explode"]) == 1


def test_bad_thread_variable(small_toml, monkeypatch, capsys):
    monkeypatch.setenv("SMAFLOW_THREADS", "zero")
    assert main(["validate", str(small_toml)]) == 1
    assert "SMAFLOW_THREADS" in capsys.readouterr().err


def test_run_emits_outputs_and_audit_passes(small_toml, tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(small_toml), "--out", str(out), "--steps", "5", "--seed", "3"]) == 0
    lines = (out / "ledger.csv").read_text().splitlines()
    assert len(lines) == 7
    assert (out / "snapshot_000000.txt").exists() and (out / "snapshot_000005.txt").exists()
    assert "# dt = 0.005" in (out / "config.toml").read_text()
    assert main(["audit", str(out)]) == 0


def test_audit_tampered_ledger(small_toml, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(small_toml), "--out", str(out), "--steps", "3"]) == 0
    ledger = out / "ledger.csv"
    rows = ledger.read_text().splitlines()
    cells = rows[2].split(",")
    cells[6] = "-0.001"  # entropy_prod
    rows[2] = ",".join(cells)
    ledger.write_text("\n".join(rows) + "\n")
    capsys.readouterr()
    assert main(["audit", str(out)]) == 2
    assert "FAILED: entropy_prod >= 0" in capsys.readouterr().err


def test_audit_missing_ledger(tmp_path):
    assert main(["audit", str(tmp_path)]) == 1


def test_material_point(tmp_path, capsys):
    cfg = tmp_path / "mp.toml"
    cfg.write_text(SMALL.replace("steps_per_cycle = 2000", "steps_per_cycle = 200"))
    assert main(["material-point", str(cfg), "--out", str(tmp_path)]) == 0
    text = (tmp_path / "material_point.csv").read_text().splitlines()
    assert text[0].startswith("t,e_xx") and len(text) == 402
    assert "loop area" in capsys.readouterr().out


def test_solver_failure_exit_code(tmp_path):
    cfg = tmp_path / "hard.toml"
    cfg.write_text(SMALL.replace("amplitude = 1.0", "amplitude = 40.0", 1)
                   + "\n[solver]\nmax_fp_iters = 1\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "o"), "--steps", "3", "--dt", "0.1"]) == 2


def test_module_entry_point(small_toml):
    res = subprocess.run([sys.executable, "-m", "smaflow", "validate", str(small_toml)],
                         capture_output=True, text=True)
    assert res.returncode == 0
