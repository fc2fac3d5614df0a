import csv

import pytest

import hybridcnot.cli as cli
from hybridcnot.cli import main
from hybridcnot.config import parse_config
from hybridcnot.device import table1_params
from hybridcnot.evolve import InstabilityError


@pytest.fixture
def equal_detunings(tmp_path):
    path = tmp_path / "flat.yaml"
    path.write_text("device:\n  omega_c_ghz: [3.24, 3.24, 3.24]\n")
    return str(path)


def test_diagnose_default(capsys):
    assert main(["diagnose"]) == 0
    out = capsys.readouterr().out
    assert "t_gate = 0.7407 us" in out
    assert "9.161e+05" in out


def test_diagnose_flags_equal_detunings(equal_detunings, capsys):
    assert main(["diagnose", "--config", equal_detunings]) == 2
    assert "WARNING" in capsys.readouterr().out


def test_malformed_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("device:\n  alpha: 1.25\n  warp: 9\n")
    assert main(["diagnose", "--config", str(path)]) == 1
    assert f"{path}:3: unknown key 'warp'" in capsys.readouterr().err


def test_usage_errors():
    assert main([]) == 1
    assert main(["teleport"]) == 1
    assert main(["sweep"]) == 1
    assert main(["--help"]) == 0


def test_dump_config_round_trip(capsys):
    assert main(["diagnose", "--dump-config", "--seed", "4"]) == 0
    cfg = parse_config(capsys.readouterr().out, "dump")
    assert cfg.device_params() == table1_params()
    assert cfg.get("solver", "seed") == 4


def test_verify_gate_default(capsys):
    assert main(["verify-gate"]) == 0
    assert "16/16 words" in capsys.readouterr().out


def test_verify_gate_sharp_threshold(capsys):
    assert main(["verify-gate", "--threshold", "1e-12"]) == 2
    out = capsys.readouterr().out
    assert "FAIL" in out and "e-11" in out


def test_verify_gate_gross_truncation(capsys):
    assert main(["verify-gate", "--cutoff", "3"]) == 2
    assert "0/16 words" in capsys.readouterr().out


def test_ghz(capsys):
    assert main(["ghz", "--m-spectators", "2", "--cutoff", "10"]) == 0
    assert "spectators = 2" in capsys.readouterr().out
    assert main(["ghz", "--n-cats", "2"]) == 1


def test_sweep_empty_grid():
    assert main(["sweep", "--var", "delta", "--grid", ""]) == 1


def test_sweep_small_run(tmp_path, capsys):
    code = main(["sweep", "--var", "delta", "--grid=-0.1,0,0.1", "--kappa-inv-us", "60", "--cutoff", "2",
                 "--n-traj", "40", "--output-dir", str(tmp_path)])
    out = capsys.readouterr().out
    assert "reference 0.9238" in out
    assert code in (0, 2)
    assert ("FAIL" in out) == (code == 2)
    rows = list(csv.DictReader((tmp_path / "sweep_delta.csv").open()))
    assert len(rows) == 3 and {r["kappa_inv_us"] for r in rows} == {"60.0"}
    assert (tmp_path / "sweep_delta.manifest.json").exists()


def test_c_sweep_reports_rotation(tmp_path, capsys):
    code = main(["sweep", "--var", "c", "--grid=0,0.05", "--kappa-inv-us", "100", "--cutoff", "2",
                 "--n-traj", "20", "--output-dir", str(tmp_path)])
    out = capsys.readouterr().out
    assert "reference 0.9348" in out
    assert "residual rotation" in out
    assert code in (0, 2)


def test_converge_flags(capsys):
    code = main(["converge", "--cutoffs", "2,3", "--resolutions", "20", "--solver", "master"])
    out = capsys.readouterr().out
    assert "flag: cutoff 2 -> 3" in out
    assert code == 2


def test_numerical_failure_exit_code(monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise InstabilityError("non-finite amplitudes")

    monkeypatch.setattr(cli, "run_sweep", boom)
    assert main(["sweep", "--var", "c"]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_interrupt_exit_code(monkeypatch):
    def stop(*args, **kwargs):
        raise KeyboardInterrupt

    monkeypatch.setattr(cli, "run_sweep", stop)
    assert main(["sweep", "--var", "delta"]) == 3
