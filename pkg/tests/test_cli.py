import subprocess
import sys

import numpy as np
import pytest

import focusfl.algorithms.focus as focus_module
from focusfl.cli import main
from focusfl.harness import CSV_COLUMNS, read_results

TINY = ["--n-clients", "4", "--dim", "3", "--samples", "5", "--rounds", "3", "--q-trials", "500"]


def header(text):
    out = {}
    for ln in text.splitlines():
        if ln.startswith("# ") and " = " in ln:
            k, v = ln[2:].split(" = ", 1)
            out[k] = v
    return out


def test_run_defaults_to_stdout(capsys, monkeypatch):
    monkeypatch.delenv("FOCUSFL_OUTPUT_DIR", raising=False)
    assert main(["run", *TINY]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# focusfl")
    assert ",".join(CSV_COLUMNS) in out
    assert len([ln for ln in out.splitlines() if not ln.startswith("#")]) == 1 + 4


def test_run_writes_file(tmp_path):
    path = tmp_path / "res" / "out.csv"
    assert main(["run", *TINY, "--algo", "fedavg", "--participation", "weighted", "--m", "2",
                 "--out", str(path)]) == 0
    recs = read_results(path)
    assert len(recs) == 4 and recs[0].algo == "fedavg" and recs[0].regime == "weighted"


def test_run_jsonl(tmp_path):
    path = tmp_path / "out.jsonl"
    assert main(["run", *TINY, "--out", str(path)]) == 0
    assert len(read_results(path)) == 4


def test_output_dir_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("FOCUSFL_OUTPUT_DIR", str(tmp_path))
    assert main(["run", *TINY, "--seed", "3"]) == 0
    assert capsys.readouterr().out == ""
    assert (tmp_path / "focus_full_seed3.csv").exists()


def test_flag_overrides_file(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("FOCUSFL_OUTPUT_DIR", raising=False)
    cfg = tmp_path / "run.cfg"
    cfg.write_text("eta = 0.001\ntau = 2\nlambda = 0.3\n")
    assert main(["run", *TINY, "--config", str(cfg), "--eta", "0.002"]) == 0
    h = header(capsys.readouterr().out)
    assert h["eta"] == "0.002" and h["tau"] == "2" and h["lam"] == "0.3"


def test_config_error_exit_two(capsys):
    assert main(["run", "--algo", "sgd"]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error:")


def test_missing_config_file_exit_two(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_argparse_error_exit_two():
    with pytest.raises(SystemExit) as exc:
        main(["run", "--rounds", "many"])
    assert exc.value.code == 2


def test_runtime_failure_exit_one_without_partial_file(tmp_path):
    path = tmp_path / "out.csv"
    args = ["run", "--n-clients", "4", "--dim", "3", "--samples", "5", "--rounds", "400",
            "--q-trials", "100", "--eta", "5", "--out", str(path)]
    with np.errstate(all="ignore"):
        assert main(args) == 1
    assert list(tmp_path.iterdir()) == []


def test_compare_long_table(capsys, monkeypatch):
    monkeypatch.delenv("FOCUSFL_OUTPUT_DIR", raising=False)
    assert main(["compare", *TINY, "--m", "2"]) == 0
    lines = [ln for ln in capsys.readouterr().out.splitlines() if not ln.startswith("#")]
    assert lines[0] == ",".join(CSV_COLUMNS)
    pairs = {tuple(ln.split(",")[1:3]) for ln in lines[1:]}
    assert pairs == {(a, r) for a in ("focus", "fedavg") for r in ("full", "uniform-m", "weighted")}


def test_sweep_is_worker_independent(tmp_path, capsys):
    for w in ("1", "2"):
        assert main(["sweep", *TINY, "--grid", "eta=0.001,0.002", "--grid", "algo=focus,fedavg",
                     "--workers", w, "--out-dir", str(tmp_path / w)]) == 0
    one = sorted((tmp_path / "1").iterdir())
    two = sorted((tmp_path / "2").iterdir())
    assert [p.name for p in one] == [p.name for p in two]
    assert len(one) == 5
    assert all(a.read_bytes() == b.read_bytes() for a, b in zip(one, two))


def test_sweep_bad_grid():
    assert main(["sweep", *TINY, "--grid", "eta"]) == 2


def test_verify_all_pass(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 10


def test_verify_suite_filter(capsys):
    assert main(["verify", "--suite", "tracking"]) == 0
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith(("PASS", "FAIL"))]
    assert lines and all("tracking/" in ln for ln in lines)


def test_verify_detects_averaged_push(capsys, monkeypatch):
    monkeypatch.setattr(focus_module, "_push", lambda y, pushed: y + (np.mean(pushed, axis=0) if pushed else 0))
    assert main(["verify", "--suite", "tracking"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_lr_bound_explicit(capsys):
    assert main(["lr-bound", "--regime", "strongly-convex", "--L", "1", "--mu", "0.1", "--n-clients", "16",
                 "--tau", "5", "--q-min", "0.25", "--eta", "5e-4"]) == 0
    out = capsys.readouterr().out
    assert "bound: 6.944444e-04" in out
    assert "binding term: 3*mu/(27*N*L^2)" in out
    assert "satisfies" in out


def test_lr_bound_tau_one_inactive(capsys):
    assert main(["lr-bound", "--regime", "nonconvex", "--L", "2", "--tau", "1", "--q-min", "0.5",
                 "--n-clients", "4"]) == 0
    out = capsys.readouterr().out
    assert "1/(2*L*(tau-1)): inactive" in out


def test_lr_bound_estimates_constants(capsys):
    assert main(["lr-bound", "--regime", "strongly-convex", "--eta", "2e-4"]) == 0
    out = capsys.readouterr().out
    assert "estimated L" in out and "estimated q_min = 0.0625" in out
    assert "violated" in out and "exceeds" in out


def test_lr_bound_needs_mu():
    assert main(["lr-bound", "--regime", "pl", "--L", "1", "--q-min", "0.1"]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "focusfl", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "focusfl" in proc.stdout
