import json
import subprocess
import sys

import pytest

from otoc_scaling.cli import main

PLAN = """\
kind: TminScan
model: {kind: LMG, gamma: 0.5}
params: {L: [40, 60, 80], T: 0.0, lam: 1.0}
grid: {t_max: 8.0, dt: 0.02}
output: run
"""


@pytest.fixture
def plan_file(tmp_path):
    p = tmp_path / "plan.yaml"
    p.write_text(PLAN)
    return p


def test_validate(plan_file, capsys):
    assert main(["validate", str(plan_file)]) == 0
    assert "TminScan" in capsys.readouterr().out


def test_validate_rejects_bad_plan(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(PLAN.replace("T: 0.0", "T: -1"))
    assert main(["validate", str(bad)]) == 1
    assert "params.T" in capsys.readouterr().err
    assert main(["run", str(bad)]) == 1


def test_run_report_and_clean(plan_file, tmp_path, capsys, monkeypatch):
    cache = tmp_path / "cache"
    monkeypatch.setenv("OTOC_CACHE_DIR", str(cache))
    assert main(["run", str(plan_file)]) == 0
    manifest = tmp_path / "run" / "manifest.json"
    assert json.loads(manifest.read_text())["status"] == "success"
    assert cache.exists()
    capsys.readouterr()
    assert main(["report", str(manifest)]) == 0
    out = capsys.readouterr().out
    assert "z = " in out and "L=80" in out
    assert main(["clean-cache"]) == 0
    assert not cache.exists()


def test_run_partial_exit_code(tmp_path, monkeypatch):
    monkeypatch.setenv("OTOC_CACHE_DIR", str(tmp_path / "cache"))
    p = tmp_path / "plan.yaml"
    p.write_text(PLAN + "budgets: {max_collective_dim: 70}\n")
    assert main(["run", str(p), "--workers", "2"]) == 2


def test_console_entry_point(plan_file, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "otoc_scaling.cli", "validate", str(plan_file)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
