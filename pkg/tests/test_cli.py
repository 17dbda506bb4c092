"""End-to-end command-line checks run through subprocesses, sized to finish
in seconds: tiny scenes, a tiny network, and a few hundred training steps."""

import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

REPO = Path(__file__).resolve().parents[1]

TINY_YAML = {
    "seed": 5,
    "task": "pointnav",
    "scene_gen": {"grid_width": 80, "grid_height": 80, "rooms_min": 1,
                  "rooms_max": 2, "furniture_density": 0.01},
    "sensor": {"height": 48, "width": 48},
    "policy": {"base_channels": 4, "feature_dim": 32, "lstm_hidden": 32},
    "ppo": {"workers": 2, "rollout_t": 8},
    "train": {"total_steps": 64, "checkpoint_interval": 32},
    "eval": {"episodes": 2},
}


def run_cli(*args, check=True):
    proc = subprocess.run(
        [sys.executable, "-m", "pednav.cli", *map(str, args)],
        capture_output=True, text=True, cwd=REPO)
    if check and proc.returncode != 0:
        raise AssertionError(
            f"cli {args} failed rc={proc.returncode}\n"
            f"stdout: {proc.stdout}\nstderr: {proc.stderr}")
    return proc


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("cfg")
    path = d / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY_YAML))
    return path


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory, cfg_file):
    out = tmp_path_factory.mktemp("scenes") / "set"
    run_cli("gen-scenes", "--config", cfg_file, "--out", out,
            "--count", 2, "--val1", 1, "--val2", 1,
            "--train-episodes", 8, "--val-episodes", 2, "--sweep", "1,2")
    return out


def test_gen_scenes_layout(scene_dir):
    manifest = json.loads((scene_dir / "manifest.json").read_text())
    splits = manifest["splits"]
    assert len(splits["train"]) == 2
    assert len(splits["val1"]) == 1
    assert len(splits["val2"]) == 1
    all_ids = splits["train"] + splits["val1"] + splits["val2"]
    assert len(set(all_ids)) == len(all_ids)          # disjoint
    for sid in all_ids:
        assert (scene_dir / f"{sid}.scene").exists()
    eps = manifest["episodes"]["pointnav"]
    for split in ("train", "val1", "val2"):
        rel = eps[split]
        path = scene_dir / rel
        assert path.exists()
        lines = path.read_text().splitlines()
        assert len(lines) == (8 if split == "train" else 2)
    sweep = manifest["sweep"]
    assert set(sweep) == {"1", "2"}
    assert sweep["1"] == splits["train"][:1]
    assert sweep["2"] == splits["train"]


def test_gen_scenes_deterministic(scene_dir, cfg_file, tmp_path):
    again = tmp_path / "again"
    run_cli("gen-scenes", "--config", cfg_file, "--out", again,
            "--count", 2, "--val1", 1, "--val2", 1,
            "--train-episodes", 8, "--val-episodes", 2, "--sweep", "1,2")
    a = (scene_dir / "manifest.json").read_bytes()
    b = (again / "manifest.json").read_bytes()
    assert a == b
    for rel in sorted(p.relative_to(scene_dir)
                      for p in scene_dir.rglob("*") if p.is_file()):
        if rel.name == "gen_config.yaml":
            continue
        assert (again / rel).read_bytes() == \
            (scene_dir / rel).read_bytes(), rel


def test_gen_scenes_rejects_zero_count(cfg_file, tmp_path):
    proc = run_cli("gen-scenes", "--config", cfg_file,
                   "--out", tmp_path / "bad", "--count", 0, check=False)
    assert proc.returncode == 2
    assert proc.stderr.strip()


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, cfg_file, scene_dir):
    out = tmp_path_factory.mktemp("runs") / "r0"
    run_cli("train", "--config", cfg_file, "--scenes", scene_dir,
            "--out", out)
    return out


def test_train_artifacts(run_dir):
    assert (run_dir / "config.yaml").exists()
    assert (run_dir / "train_log.csv").exists()
    cks = list((run_dir / "checkpoints").glob("ckpt_*.bin"))
    assert cks
    log = (run_dir / "train_log.csv").read_text().splitlines()
    assert len(log) >= 2
    assert log[0].split(",")[:2] == ["step", "update"]


def test_train_resume_auto(run_dir, cfg_file, scene_dir, tmp_path):
    """--resume auto on a finished run loads the last checkpoint and exits
    without adding steps."""
    proc = run_cli("train", "--config", cfg_file, "--scenes", scene_dir,
                   "--out", run_dir, "--resume", "auto")
    result = json.loads(proc.stdout.splitlines()[-1])
    assert result["env_steps"] >= 64


def test_eval_outputs(run_dir, scene_dir, tmp_path):
    out = tmp_path / "eval1"
    proc = run_cli("eval", "--runs", run_dir, "--scenes", scene_dir,
                   "--out", out)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seeds"] == 1
    assert 0.0 <= summary["success"]["mean"] <= 1.0
    assert (out / "records_seed0.csv").exists()
    assert "success" in proc.stdout

    out2 = tmp_path / "eval2"
    run_cli("eval", "--runs", run_dir, "--scenes", scene_dir, "--out", out2)
    assert (out / "summary.json").read_bytes() == \
        (out2 / "summary.json").read_bytes()
    assert (out / "records_seed0.csv").read_bytes() == \
        (out2 / "records_seed0.csv").read_bytes()


def test_transfer_eval_outputs(run_dir, scene_dir, tmp_path):
    out = tmp_path / "tr1"
    run_cli("transfer-eval", "--runs", run_dir, "--scenes", scene_dir,
            "--out", out)
    summary = json.loads((out / "transfer_summary.json").read_text())
    row = summary["rows"][0]
    assert row["label"] == "none"
    for flavor in ("scan", "clean"):
        assert 0.0 <= row[flavor]["success"] <= 1.0
    assert row["delta"]["success"] == pytest.approx(
        row["clean"]["success"] - row["scan"]["success"])

    out2 = tmp_path / "tr2"
    run_cli("transfer-eval", "--runs", run_dir, "--scenes", scene_dir,
            "--out", out2)
    assert (out / "transfer_summary.json").read_bytes() == \
        (out2 / "transfer_summary.json").read_bytes()


def test_bench_single_worker(tmp_path, cfg_file):
    out = tmp_path / "bench.json"
    run_cli("bench", "--config", cfg_file, "--workers", 1,
            "--steps", 3000, "--out", out)
    report = json.loads(out.read_text())
    assert report["workers"] == 1
    assert report["single_steps_per_sec"] > 0
    assert report["resolution"] == [48, 48]


def test_missing_manifest_is_reported(cfg_file, tmp_path):
    proc = run_cli("train", "--config", cfg_file,
                   "--scenes", tmp_path / "nowhere",
                   "--out", tmp_path / "r", check=False)
    assert proc.returncode == 2
    assert "manifest" in proc.stderr.lower() or proc.stderr.strip()
