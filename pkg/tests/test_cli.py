import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from avaas.cli import main

RING = """
seed = 5
[network]
builtin = "ring"
length_m = 1000.0
lanes = 2
[demand]
horizon_s = 900.0
[[demand.initial]]
edge = "ring"
count = 30
speed_mps = 8.0
[observers]
penetration_pct = 20.0
[clustering]
k = 2
k_max = 2
[estimation]
lane_stays = true
"""

PRODUCTS = ["trajectory.csv", "ground_truth.csv", "estimates.csv", "stays.csv", "clusters.csv", "elbow.csv",
            "errors.csv", "error_summary.txt", "error_hist.csv", "mfd.csv"]


@pytest.fixture
def scenario(tmp_path):
    p = tmp_path / "ring.toml"
    p.write_text(RING)
    return p


def run(*args):
    return main([str(a) for a in args])


def test_full_run_writes_artifacts(scenario, tmp_path):
    out = tmp_path / "out"
    assert run("run", "--scenario", scenario, "--out", out) == 0
    for name in PRODUCTS:
        assert (out / name).stat().st_size > 0, name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 5 and len(manifest["config_hash"]) == 64
    assert set(manifest["stages"]) == {"simulate", "detect-estimate", "cluster", "compare", "mfd"}
    assert manifest["stages"]["mfd"] == {"mfd.csv": manifest["stages"]["mfd"]["mfd.csv"]}


def test_compare_without_estimate_is_dependency_error(scenario, tmp_path, capsys):
    out = tmp_path / "o"
    assert run("simulate", "--scenario", scenario, "--out", out) == 0
    assert run("compare", "--scenario", scenario, "--out", out) == 2
    assert "detect-estimate" in capsys.readouterr().err


def test_validation_exit_code(scenario, tmp_path):
    assert run("simulate", "--scenario", scenario, "--out", tmp_path / "o", "--set", "aggregation.t_agg_s=7.5") == 1
    assert run("simulate", "--scenario", tmp_path / "missing.toml", "--out", tmp_path / "o") == 1


def test_rerun_is_byte_identical(scenario, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("run", "--scenario", scenario, "--out", a) == 0
    assert run("run", "--scenario", scenario, "--out", b, "--workers", "2") == 0
    for name in PRODUCTS + ["manifest.json"]:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_seed_flag_changes_output(scenario, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run("run", "--scenario", scenario, "--out", a, "--stages", "simulate,detect-estimate")
    run("run", "--scenario", scenario, "--out", b, "--stages", "simulate,detect-estimate", "--seed", "6")
    assert (a / "estimates.csv").read_bytes() != (b / "estimates.csv").read_bytes()


def test_stage_isolation(scenario, tmp_path):
    """Each stage runs in a fresh directory holding only its documented inputs."""
    ref = tmp_path / "ref"
    assert run("run", "--scenario", scenario, "--out", ref) == 0
    needs = {
        "estimate": ["trajectory.csv"],
        "cluster": ["ground_truth.csv"],
        "compare": ["ground_truth.csv", "estimates.csv", "clusters.csv", "stays.csv"],
        "mfd": ["ground_truth.csv", "estimates.csv", "clusters.csv"],
    }
    makes = {"estimate": ["estimates.csv", "stays.csv"], "cluster": ["clusters.csv", "elbow.csv"],
             "compare": ["errors.csv", "error_summary.txt", "error_hist.csv"], "mfd": ["mfd.csv"]}
    for cmd, inputs in needs.items():
        d = tmp_path / f"iso_{cmd}"
        d.mkdir()
        for name in inputs:
            shutil.copy(ref / name, d / name)
        assert run(cmd, "--scenario", scenario, "--out", d) == 0
        for name in makes[cmd]:
            assert (d / name).read_bytes() == (ref / name).read_bytes(), (cmd, name)


def test_ingest_then_estimate(scenario, tmp_path):
    ref = tmp_path / "ref"
    run("simulate", "--scenario", scenario, "--out", ref)
    text = (ref / "trajectory.csv").read_text().replace(",", ";")
    src = tmp_path / "ext.csv"
    src.write_text(text)
    out = tmp_path / "ing"
    assert run("ingest", src, "--scenario", scenario, "--out", out, "--delimiter", ";") == 0
    assert (out / "trajectory.csv").read_bytes() == (ref / "trajectory.csv").read_bytes()
    assert (out / "ground_truth.csv").read_bytes() == (ref / "ground_truth.csv").read_bytes()


def test_ingest_strict_and_lenient(scenario, tmp_path, capsys):
    src = tmp_path / "bad.csv"
    src.write_text("timestep_s,vehicle_id,edge_id,lane_index,position_m,speed_mps\n"
                   "0,1,ring,0,5.0,1.0\n0,2,ring,0,5000.0,1.0\n1,1,ring,0,6.0,1.0\n")
    assert run("ingest", src, "--scenario", scenario, "--out", tmp_path / "s") == 1
    assert "row 3" in capsys.readouterr().err
    assert run("ingest", src, "--scenario", scenario, "--out", tmp_path / "l", "--lenient") == 0
    assert "dropped 1 of 3" in capsys.readouterr().err


def test_sweep(scenario, tmp_path):
    out = tmp_path / "o"
    run("simulate", "--scenario", scenario, "--out", out)
    assert run("sweep", "--scenario", scenario, "--out", out, "--rates", "10,50") == 0
    rows = (out / "sweep.csv").read_text().splitlines()
    assert rows[0].startswith("penetration_pct,source,scope_kind,quantity")
    assert {r.split(",")[0] for r in rows[1:]} == {"10.0", "50.0"}


def test_module_entry_point(scenario, tmp_path):
    res = subprocess.run([sys.executable, "-m", "avaas", "compare", "--scenario", str(scenario),
                          "--out", str(tmp_path / "none")], capture_output=True, text=True)
    assert res.returncode == 2
