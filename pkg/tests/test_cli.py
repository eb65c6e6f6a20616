import json
import os
import subprocess
import sys

import numpy as np
import pytest

from stiffkit import io
from stiffkit.cli import main
from stiffkit.datasets import synth_dataset
from stiffkit.theory import random_trajectory_set


def run(*argv):
    return main([str(a) for a in argv])


def load(path):
    with open(path) as fh:
        return json.load(fh)


@pytest.fixture
def trajdir(tmp_path):
    d = tmp_path / "trajs"
    d.mkdir()
    for i, t in enumerate(random_trajectory_set(np.random.default_rng(0), n_inputs=6)):
        io.save_trajectory(d / f"t{i}.json", t)
    return d


@pytest.fixture
def small_train(tmp_path):
    cfg = {
        "network": {"stage_widths": [6], "blocks_per_stage": [3], "adaptor": "stepnet"},
        "hyper": {"epochs": 3, "batch_size": 32},
        "dataset": {"kind": "moons", "n": 60, "noise": 0.2},
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    io.save_dataset(tmp_path / "ds.json", synth_dataset("moons", n=60, noise=0.2))
    return tmp_path


# -- integrate ----------------------------------------------------------------------


def test_integrate_adaptive(tmp_path):
    out = tmp_path / "t.json"
    assert run("integrate", "--system", "decay", "--method", "rkf45", "--tol", "1e-8", "--span", "0,1", "--out", out) == 0
    traj = io.load_trajectory(out)
    assert abs(traj.states[-1][0] - np.exp(-1)) < 1e-7


def test_integrate_fixed_steps(tmp_path):
    out = tmp_path / "t.json"
    assert run("integrate", "--system", "decay", "--method", "forward_euler", "--steps", "4", "--out", out) == 0
    assert io.load_trajectory(out).states[-1][0] == pytest.approx(0.75**4)


def test_numeric_failure_exits_two_without_output(tmp_path):
    out = tmp_path / "t.json"
    code = run("integrate", "--system", "stiff_sine", "--method", "forward_euler", "--dt", "0.0021", "--out", out)
    assert code == 2
    assert not out.exists()


@pytest.mark.parametrize(
    "argv",
    [
        ["integrate", "--system", "lorenz", "--tol", "1e-6"],
        ["integrate", "--system", "decay", "--method", "rkf45"],
        ["integrate", "--system", "decay", "--method", "rk4", "--dt", "0.1", "--steps", "3"],
        ["integrate", "--system", "decay", "--tol", "1e-6", "--span", "0"],
        ["integrate", "--system", "decay", "--tol", "1e-6", "--bogus"],
        ["frobnicate"],
        [],
    ],
)
def test_validation_errors_exit_one(tmp_path, argv):
    out = tmp_path / "t.json"
    assert run(*argv, "--out", out) == 1
    assert not out.exists()


def test_missing_output_directory(tmp_path):
    assert run("integrate", "--system", "decay", "--tol", "1e-6", "--out", tmp_path / "no" / "t.json") == 1


def test_help_documents_flags(capsys):
    assert run("tns", "--help") == 0
    text = capsys.readouterr().out
    for flag in ("--trajs", "--grid", "--cap", "--refine", "--seed", "--threads"):
        assert flag in text


# -- stiffness and tns --------------------------------------------------------------


def test_stiffness_profile_and_bounds(tmp_path, trajdir):
    out, bounds = tmp_path / "p.csv", tmp_path / "b.json"
    assert run("stiffness", "--traj", trajdir / "t0.json", "--out", out, "--bounds", bounds) == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "input_id,stage,block,nsi,included" and len(lines) == 1 + 8
    b = load(bounds)
    assert b["k1"] <= b["k2"] and b["cap"] > 0


def test_tns_from_directory(tmp_path, trajdir):
    out = tmp_path / "tns.json"
    assert run("tns", "--trajs", trajdir, "--grid", "10,10,64", "--out", out) == 0
    est = load(out)
    assert est["value"] >= 0
    assert run("tns", "--trajs", trajdir, "--grid", "10,10,16", "--cap", "--refine", "16,32", "--out", out) == 0
    assert len(load(out)["refinements"]) == 2


@pytest.mark.parametrize("grid", ["10,10", "0,10,16", "10,10,0", "a,b,c"])
def test_tns_rejects_bad_grids(tmp_path, trajdir, grid):
    assert run("tns", "--trajs", trajdir, "--grid", grid, "--out", tmp_path / "x.json") == 1


def test_tns_rejects_bad_trajectory(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"states": [[1.0], [2.0], [3.0]], "step_sizes": [1.0]}))
    out = tmp_path / "x.json"
    assert run("tns", "--trajs", bad, "--out", out) == 1
    assert not out.exists()


# -- train and model-driven commands --------------------------------------------------


def test_train_is_reproducible(small_train):
    t = small_train
    for name in ("a", "b"):
        assert run("train", "--config", t / "cfg.json", "--seed", 3, "--out", t / f"{name}.json",
                   "--metrics", t / f"{name}_m.json") == 0
    assert (t / "a.json").read_bytes() == (t / "b.json").read_bytes()
    assert (t / "a_m.json").read_bytes() == (t / "b_m.json").read_bytes()
    assert load(t / "a.json")["seed"] == 3
    assert run("--seed", 4, "train", "--config", t / "cfg.json", "--out", t / "c.json") == 0
    assert (t / "c.json").read_bytes() != (t / "a.json").read_bytes()


def test_model_pipeline(small_train):
    t = small_train
    assert run("train", "--config", t / "cfg.json", "--dataset", t / "ds.json", "--out", t / "m.json") == 0
    assert run("tns", "--model", t / "m.json", "--dataset", t / "ds.json", "--out", t / "tns.json") == 0
    assert load(t / "tns.json")["value"] >= 0
    assert run("analyze", "attention", "--model", t / "m.json", "--dataset", t / "ds.json", "--out", t / "att.json") == 0
    att = load(t / "att.json")
    assert len(att["blocks"]) == 3 and len(att["histogram"]["edges"]) == 11
    for b in att["blocks"]:
        assert b["status"] == "undefined" or -1 <= b["tau"] <= 1


def test_train_with_unknown_hyper_field(small_train):
    t = small_train
    cfg = load(t / "cfg.json")
    cfg["hyper"]["nesterov"] = True
    (t / "cfg.json").write_text(json.dumps(cfg))
    assert run("train", "--config", t / "cfg.json", "--out", t / "m.json") == 1


def test_training_divergence_exits_two_without_outputs(small_train):
    t = small_train
    cfg = load(t / "cfg.json")
    cfg["hyper"]["lr"] = 1e6
    cfg["network"]["adaptor"] = "none"
    (t / "cfg.json").write_text(json.dumps(cfg))
    assert run("train", "--config", t / "cfg.json", "--out", t / "m.json", "--metrics", t / "mm.json") == 2
    assert not (t / "m.json").exists() and not (t / "mm.json").exists()


# -- verify ---------------------------------------------------------------------------


def test_verify_theorem2_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run("verify", "theorem2", "--out", a) == 0
    assert run("verify", "theorem2", "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    reports = load(a)["reports"]
    assert [r["si"] for r in reports] == [10.0, 100.0, 1000.0, 10000.0]


def test_verify_lemma1(tmp_path, trajdir):
    out = tmp_path / "l.json"
    assert run("verify", "lemma1_tns", "--sets", 2, "--inputs", 5, "--levels", "8,16", "--out", out) == 0
    reps = load(out)["reports"]
    assert len(reps) == 2 and all(r["zero_region_verified"] for r in reps)
    assert run("verify", "lemma1_tns", "--trajs", trajdir, "--levels", "8,16", "--out", out) == 0
    assert len(load(out)["reports"]) == 1


def test_verify_stiff_compare(tmp_path):
    out = tmp_path / "s.json"
    assert run("verify", "stiff_compare", "--out", out) == 0
    rep = load(out)
    assert rep["matched"] and 0.0021 in rep["fixed_diverged_dt"]


# -- analyze ------------------------------------------------------------------------------


def test_analyze_correlate(tmp_path):
    rec = tmp_path / "r.csv"
    rec.write_text("model_id,adaptor,seed,accuracy,tns\n0,none,0,0.5,1\n1,none,1,0.7,2\n2,none,2,0.6,3\n")
    out = tmp_path / "c.json"
    assert run("analyze", "correlate", "--records", rec, "--out", out) == 0
    assert load(out) == {"kendall": pytest.approx(1 / 3), "spearman": 0.5, "n": 3}
    rec.write_text("model_id,adaptor,seed,accuracy,tns\n0,none,0,0.5,1\n1,none,1,0.5,1\n")
    assert run("analyze", "correlate", "--records", rec, "--out", out) == 1


def _ensemble(tmp_path, threads_flag, env):
    cfg = {
        "network": {"stage_widths": [6], "blocks_per_stage": [4]},
        "hyper": {"epochs": 2, "batch_size": 32},
        "dataset": {"kind": "moons", "n": 60, "noise": 0.2},
    }
    (tmp_path / "e.json").write_text(json.dumps(cfg))
    tag = "x".join(threads_flag) or "env"
    outs = [tmp_path / f"corr_{tag}.json", tmp_path / f"rec_{tag}.csv", tmp_path / f"gt_{tag}.json"]
    argv = ["analyze", "ensemble", "--config", tmp_path / "e.json", "--out", outs[0],
            "--records", outs[1], "--proxy-gt", outs[2], *threads_flag]
    old = os.environ.get("STIFFKIT_THREADS")
    try:
        if env is not None:
            os.environ["STIFFKIT_THREADS"] = env
        assert run(*argv) == 0
    finally:
        if old is None:
            os.environ.pop("STIFFKIT_THREADS", None)
        else:
            os.environ["STIFFKIT_THREADS"] = old
    return [p.read_bytes() for p in outs]


def test_analyze_ensemble_threads_are_reproducible(tmp_path):
    one = _ensemble(tmp_path, ["--threads", "1"], None)
    many = _ensemble(tmp_path, ["--threads", "4"], None)
    env = _ensemble(tmp_path, [], "3")
    assert one == many == env
    assert one[1].decode().count("\n") == 13


def test_bad_thread_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("STIFFKIT_THREADS", "many")
    (tmp_path / "e.json").write_text(json.dumps({"dataset": {"kind": "moons", "n": 40}}))
    code = run("analyze", "ensemble", "--config", tmp_path / "e.json", "--out", tmp_path / "c.json",
               "--records", tmp_path / "r.csv")
    assert code == 1


def test_console_script_entry_point(tmp_path):
    out = tmp_path / "t.json"
    proc = subprocess.run(
        [sys.executable, "-m", "stiffkit.cli", "integrate", "--system", "decay", "--tol", "1e-6", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0 and out.exists()
    proc = subprocess.run([sys.executable, "-m", "stiffkit.cli", "integrate", "--nope"], capture_output=True, text=True)
    assert proc.returncode == 1 and "usage" in proc.stderr
