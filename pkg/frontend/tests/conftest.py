import subprocess
import sys

import pytest


def run_hesslab(args):
    """Drive the numerical core through its CLI (the only allowed interface)."""
    proc = subprocess.run(
        [sys.executable, "-m", "hesslab.cli", *args],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="session")
def concentration_files(tmp_path_factory):
    out = tmp_path_factory.mktemp("conc") / "run"
    run_hesslab([
        "concentration", "--case", "linear_ce", "--d", "80", "--N", "80",
        "--C", "4,16", "--trials", "15", "--theory-samples", "20000",
        "--seed", "0", "--out", str(out),
    ])
    return {"csv": f"{out}_concentration.csv", "theory": f"{out}_theory.json"}


@pytest.fixture(scope="session")
def decay_files(tmp_path_factory):
    out = tmp_path_factory.mktemp("decay") / "run"
    run_hesslab([
        "decay", "--case", "linear_ce", "--d", "64", "--N", "64",
        "--grid", "8,32,128", "--trials", "8", "--seed", "1", "--out", str(out),
    ])
    return {"csv": f"{out}_decay.csv", "fit": f"{out}_fit.json"}


@pytest.fixture(scope="session")
def hessian_files(tmp_path_factory):
    out = tmp_path_factory.mktemp("hess") / "run"
    run_hesslab([
        "hessian", "--model", "mlp", "--loss", "ce", "--d", "12", "--m", "3",
        "--C", "4", "--N", "16", "--full", "--heatmap", "--seed", "3",
        "--out", str(out),
    ])
    return {"matrix": f"{out}_heatmap.hmat", "layout": f"{out}_layout.json"}


@pytest.fixture(scope="session")
def trace_files(tmp_path_factory):
    out = tmp_path_factory.mktemp("trace") / "run"
    run_hesslab([
        "train", "--d", "12", "--m", "3", "--C", "4", "--N", "16",
        "--steps", "40", "--snapshots", "0,0.5,1.0", "--seed", "2",
        "--out", str(out),
    ])
    return {"csv": f"{out}_trace.csv"}
