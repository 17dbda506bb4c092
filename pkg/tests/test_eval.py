import json
import math
from dataclasses import replace

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from pednav.evaluation import (AGGREGATE_KEYS, MetricsRecord,
                               effort_efficiency, evaluate_seeds, ins,
                               list_checkpoints, run_eval,
                               select_checkpoint, spl, write_records_csv,
                               write_summary_json)
from pednav.policy import NavPolicy, save_checkpoint
from pednav.rng import substream
from pednav.simcore import MovableObject
from pednav.config import policy_arch_hash


def test_spl_closed_forms():
    assert spl(1, 5.0, 5.0) == 1.0
    assert spl(1, 5.0, 10.0) == 0.5
    assert spl(0, 5.0, 5.0) == 0.0
    # agent "beats" the geodesic via clamp: never exceeds 1
    assert spl(1, 5.0, 3.0) == 1.0


def test_spl_rejects_bad_lengths():
    with pytest.raises(ValueError):
        spl(1, 0.0, 5.0)
    with pytest.raises(ValueError):
        spl(1, -1.0, 5.0)
    with pytest.raises(ValueError):
        spl(1, 5.0, -0.1)


@given(st.booleans(), st.floats(0.01, 50), st.floats(0, 200))
def test_spl_bounded_by_success(success, l, p):
    v = spl(success, l, p)
    assert 0.0 <= v <= float(success)


def _obj(mass, disp):
    o = MovableObject(position=(0.0, 0.0), half_extent=0.2, mass=mass)
    o.total_displacement = disp
    return o


def test_effort_efficiency_closed_forms():
    assert effort_efficiency([]) == 1.0
    assert effort_efficiency([_obj(1.0, 0.0)]) == 1.0
    assert effort_efficiency([_obj(1.0, 1.0)]) == 0.5
    assert effort_efficiency([_obj(0.5, 1.0), _obj(0.5, 1.0)]) == 0.5
    assert effort_efficiency([_obj(2.0, 1.5)]) == 0.25


def test_ins_closed_forms():
    assert ins(1.0, 1.0) == 1.0
    assert ins(0.0, 1.0) == 0.5
    assert ins(0.6, 0.2) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        ins(1.2, 0.5)
    with pytest.raises(ValueError):
        ins(0.5, -0.01)


@pytest.fixture(scope="module")
def eval_setup(small_cfg, small_scene, small_episodes):
    torch.manual_seed(0)
    policy = NavPolicy(small_cfg.policy, small_cfg.sensor.height,
                       small_cfg.sensor.width)
    scenes = {small_scene.id: small_scene}
    return policy, scenes, small_episodes[:4], small_cfg


def test_run_eval_records(eval_setup):
    policy, scenes, eps, cfg = eval_setup
    records, agg = run_eval(policy, scenes, eps, cfg)
    assert len(records) == len(eps)
    for i, r in enumerate(records):
        assert r.episode_index == i
        assert r.outcome in ("success", "stop_failure", "ped_collision",
                             "timeout")
        assert r.success == (r.outcome == "success")
        assert 0 < r.steps <= cfg.episode.max_steps
        assert r.spl <= r.success
        assert 0.0 <= r.ins <= 1.0
        assert r.shortest_path_length > 0
    for k in AGGREGATE_KEYS:
        assert k in agg
    assert agg["episodes"] == len(eps)
    assert agg["success"] == pytest.approx(
        sum(r.success for r in records) / len(records))


def test_run_eval_deterministic(eval_setup):
    policy, scenes, eps, cfg = eval_setup
    r1, a1 = run_eval(policy, scenes, eps, cfg)
    r2, a2 = run_eval(policy, scenes, eps, cfg)
    assert a1 == a2
    for x, y in zip(r1, r2):
        assert x == y


def _write_ckpt(run_dir, cfg, step, seed):
    torch.manual_seed(seed)
    policy = NavPolicy(cfg.policy, cfg.sensor.height, cfg.sensor.width)
    ckdir = run_dir / "checkpoints"
    ckdir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckdir / f"ckpt_{step:010d}.bin", policy,
                    policy_arch_hash(cfg), step)
    return policy


def test_list_checkpoints_sorted(tmp_path, small_cfg):
    for step in (300, 100, 200):
        _write_ckpt(tmp_path, small_cfg, step, step)
    got = list_checkpoints(tmp_path)
    assert [s for s, _ in got] == [100, 200, 300]
    assert all(p.name == f"ckpt_{s:010d}.bin" for s, p in got)


def test_select_checkpoint_argmax_ties_to_latest(tmp_path, small_cfg,
                                                 small_scene, small_episodes,
                                                 monkeypatch):
    for step in (100, 200, 300):
        _write_ckpt(tmp_path, small_cfg, step, step)
    scores = {100: 0.5, 200: 0.8, 300: 0.8}
    calls = []

    def fake_run_eval(policy, scenes, episodes, cfg):
        return [], {"success": scores[calls[-1]], "episodes": 0}

    import pednav.evaluation as ev

    real_load = ev.load_policy

    def spy_load(path, cfg):
        policy, step = real_load(path, cfg)
        calls.append(step)
        return policy, step

    monkeypatch.setattr(ev, "load_policy", spy_load)
    monkeypatch.setattr(ev, "run_eval", fake_run_eval)
    scenes = {small_scene.id: small_scene}
    path, step, rate = select_checkpoint(tmp_path, scenes,
                                         small_episodes[:2], small_cfg)
    # 200 and 300 tie at 0.8; the later one wins
    assert step == 300
    assert path.name == "ckpt_0000000300.bin"
    assert rate == 0.8
    assert calls == [100, 200, 300]


def test_select_checkpoint_requires_checkpoints(tmp_path, small_cfg,
                                                small_scene):
    with pytest.raises(FileNotFoundError):
        select_checkpoint(tmp_path, {small_scene.id: small_scene}, [],
                          small_cfg)


def test_records_csv_round_trip(tmp_path, eval_setup):
    policy, scenes, eps, cfg = eval_setup
    records, _ = run_eval(policy, scenes, eps, cfg)
    path = tmp_path / "records.csv"
    write_records_csv(path, records)
    import csv
    with open(path) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == len(records)
    assert rows[0]["scene_id"] == records[0].scene_id
    assert float(rows[1]["spl"]) == pytest.approx(records[1].spl, abs=1e-9)
    # stable bytes on rewrite
    write_records_csv(tmp_path / "again.csv", records)
    assert path.read_bytes() == (tmp_path / "again.csv").read_bytes()


def test_summary_json_stable(tmp_path):
    summary = {"b": 1.5, "a": {"z": [1, 2], "y": 0.25}}
    p1 = tmp_path / "s1.json"
    p2 = tmp_path / "s2.json"
    write_summary_json(p1, summary)
    write_summary_json(p2, json.loads(p1.read_text()))
    assert p1.read_bytes() == p2.read_bytes()
    assert json.loads(p1.read_text()) == summary


def test_evaluate_seeds_aggregates(tmp_path, small_cfg, small_scene,
                                   small_episodes, monkeypatch):
    import pednav.evaluation as ev
    runs = []
    for i, s in enumerate((0.4, 0.6)):
        rd = tmp_path / f"run{i}"
        _write_ckpt(rd, small_cfg, 100, i)
        runs.append(rd)

    seed_scores = {str(tmp_path / "run0"): 0.4, str(tmp_path / "run1"): 0.6}
    current = {"score": None}

    def fake_select(run_dir, scenes, episodes, cfg):
        current["score"] = seed_scores[str(run_dir)]
        return (run_dir / "checkpoints" / "ckpt_0000000100.bin", 100,
                current["score"])

    def fake_run_eval(policy, scenes, episodes, cfg):
        s = current["score"]
        rec = MetricsRecord(
            episode_index=0, scene_id="s", task="pointnav",
            outcome="success", success=True, spl=s, effort_efficiency=1.0,
            ins=(s + 1) / 2, steps=10, agent_path_length=1.0,
            shortest_path_length=1.0, final_distance=0.0,
            episode_return=1.0)
        agg = {k: float(getattr(rec, k)) for k in AGGREGATE_KEYS}
        agg["episodes"] = 1
        return [rec], agg

    monkeypatch.setattr(ev, "select_checkpoint", fake_select)
    monkeypatch.setattr(ev, "run_eval", fake_run_eval)
    scenes = {small_scene.id: small_scene}
    out = evaluate_seeds(runs, scenes, small_episodes[:2],
                         small_episodes[2:4], small_cfg)
    assert out["summary"]["seeds"] == 2
    assert out["summary"]["spl"]["mean"] == pytest.approx(0.5)
    # population std of {0.4, 0.6}
    assert out["summary"]["spl"]["std"] == pytest.approx(0.1)
    assert len(out["per_seed"]) == 2
