"""Navigation metrics and the evaluation protocol.

Evaluation is deterministic end to end: the policy acts through its clamped
mean, image augmentation runs in eval mode (center crop only), and episodes
carry their own pedestrian counts from the dataset (0 for PointNav, 3 for
SocialNav), never the training override.  Model selection uses the val1
split, reported numbers come from val2, and the headline figures are
mean +/- population std over the seed runs.
"""

import csv
import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .augment import apply_pipeline
from .config import RunConfig, policy_arch_hash, policy_input_dims
from .policy import NavPolicy, load_checkpoint, load_flat_params
from .simcore import Action
from .tasks import env_step, reset

AGGREGATE_KEYS = ("success", "spl", "effort_efficiency", "ins", "steps",
                  "agent_path_length")


@dataclass
class MetricsRecord:
    episode_index: int
    scene_id: str
    task: str
    outcome: str
    success: int
    spl: float
    effort_efficiency: float
    ins: float
    steps: int
    agent_path_length: float
    shortest_path_length: float
    final_distance: float
    episode_return: float


def spl(success, shortest_length: float, path_length: float) -> float:
    """Success weighted by normalized inverse path length:
    success * l / max(p, l)."""
    if shortest_length <= 0.0:
        raise ValueError(f"shortest path length must be > 0, "
                         f"got {shortest_length}")
    if path_length < 0.0:
        raise ValueError(f"agent path length must be >= 0, got {path_length}")
    return float(success) * shortest_length / max(path_length,
                                                  shortest_length)


def effort_efficiency(objects) -> float:
    """1 / (1 + sum_i mass_i * displacement_i / 1 kg*m).  Displacement-only
    disturbance surrogate; 1.0 when nothing was moved (or nothing movable
    exists)."""
    total = 0.0
    for obj in objects:
        total += obj.mass * obj.total_displacement
    return 1.0 / (1.0 + total)


def ins(spl_value: float, effort: float) -> float:
    for name, v in (("spl", spl_value), ("effort", effort)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {v}")
    return 0.5 * (spl_value + effort)


def run_eval(policy: NavPolicy, scenes: dict, episodes, cfg: RunConfig):
    """Roll the policy (mean actions) through every episode.  Returns
    (records, aggregate) where aggregate holds per-key means over episodes."""
    policy.eval()
    bounds = (cfg.sim.v_max, cfg.sim.omega_max)
    records = []
    with torch.no_grad():
        for idx, spec in enumerate(episodes):
            scene = scenes[spec.scene_id]
            state, obs = reset(scene, spec, sim=cfg.sim, sensor=cfg.sensor,
                               reward_cfg=cfg.reward,
                               episode_cfg=cfg.episode)
            obs = apply_pipeline(obs, cfg.augment, None, "eval")
            hidden = policy.initial_hidden(1)
            ep_return = 0.0
            while not state.done:
                inputs = policy.encode_inputs(
                    torch.from_numpy(np.ascontiguousarray(obs.depth[None])),
                    torch.tensor([obs.goal_vector], dtype=torch.float32),
                    torch.tensor([obs.prev_action], dtype=torch.float32))
                dist, _, hidden = policy.step(inputs, hidden)
                a = dist.mean_action(bounds)[0]
                out = env_step(state, Action(float(a[0]), float(a[1]),
                                             v_max=bounds[0],
                                             omega_max=bounds[1]))
                ep_return += out.reward
                if not out.done:
                    obs = apply_pipeline(out.obs, cfg.augment, None, "eval")
            success = 1 if state.outcome == "success" else 0
            s = spl(success, spec.shortest_path_length,
                    state.agent_path_length)
            e = effort_efficiency(state.objects)
            records.append(MetricsRecord(
                episode_index=idx, scene_id=spec.scene_id, task=spec.task,
                outcome=state.outcome, success=success, spl=s,
                effort_efficiency=e, ins=ins(s, e),
                steps=state.step_count,
                agent_path_length=state.agent_path_length,
                shortest_path_length=spec.shortest_path_length,
                final_distance=state.goal_distance_euclidean(),
                episode_return=ep_return))
    agg = {k: float(np.mean([getattr(r, k) for r in records]))
           for k in AGGREGATE_KEYS}
    agg["episodes"] = len(records)
    return records, agg


# -------------------------------------------------------------- selection


_CKPT_RE = re.compile(r"ckpt_(\d+)\.bin$")


def list_checkpoints(run_dir) -> list:
    """(step, path) pairs under <run_dir>/checkpoints, ascending by step."""
    ckpt_dir = Path(run_dir) / "checkpoints"
    found = []
    if ckpt_dir.is_dir():
        for p in ckpt_dir.iterdir():
            m = _CKPT_RE.search(p.name)
            if m:
                found.append((int(m.group(1)), p))
    return sorted(found)


def load_policy(path, cfg: RunConfig) -> tuple:
    """Builds the policy for cfg and loads checkpoint params into it,
    refusing architecture mismatches.  Returns (policy, step)."""
    ck = load_checkpoint(path, expected_hash=policy_arch_hash(cfg))
    h, w = policy_input_dims(cfg)
    policy = NavPolicy(cfg.policy, h, w, cfg.sim.v_max, cfg.sim.omega_max)
    load_flat_params(policy, ck["params"])
    return policy, ck["step"]


def select_checkpoint(run_dir, scenes: dict, episodes, cfg: RunConfig):
    """Evaluate every checkpoint on the selection episodes and return
    (path, step, success_rate) of the best one.  Ties go to the latest
    step (>= comparison over the ascending list)."""
    ckpts = list_checkpoints(run_dir)
    if not ckpts:
        raise FileNotFoundError(f"no checkpoints under {run_dir}")
    best = None
    for step, path in ckpts:
        policy, _ = load_policy(path, cfg)
        _, agg = run_eval(policy, scenes, episodes, cfg)
        if best is None or agg["success"] >= best[2]:
            best = (path, step, agg["success"])
    return best


def evaluate_seeds(run_dirs, scenes: dict, selection_episodes,
                   reporting_episodes, cfg: RunConfig) -> dict:
    """Per-seed: pick the best checkpoint on the selection split, then score
    it on the reporting split.  Summary reports mean +/- population std over
    seeds for every aggregate key."""
    per_seed = []
    for run_dir in run_dirs:
        path, step, sel_success = select_checkpoint(
            run_dir, scenes, selection_episodes, cfg)
        policy, _ = load_policy(path, cfg)
        records, agg = run_eval(policy, scenes, reporting_episodes, cfg)
        per_seed.append({
            "run_dir": str(run_dir),
            "selected_checkpoint": str(path),
            "selected_step": step,
            "selection_success": sel_success,
            "aggregate": agg,
            "records": records,
        })
    summary = {"seeds": len(per_seed), "per_seed": [
        {k: v for k, v in s.items() if k != "records"} for s in per_seed]}
    for key in AGGREGATE_KEYS:
        vals = np.array([s["aggregate"][key] for s in per_seed], np.float64)
        summary[key] = {"mean": float(vals.mean()),
                        "std": float(vals.std(ddof=0))}
    return {"summary": summary, "per_seed": per_seed}


# ---------------------------------------------------------------- outputs


def write_records_csv(path, records) -> None:
    fields = list(MetricsRecord.__dataclass_fields__)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for r in records:
            row = asdict(r)
            for k, v in row.items():
                if isinstance(v, float):
                    row[k] = f"{v:.10g}"
            writer.writerow(row)


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
