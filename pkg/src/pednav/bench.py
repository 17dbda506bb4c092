"""Throughput benchmark: env_step + render with random actions, no learning.

Single-worker rate plus a K-process aggregate (fork start method keeps the
JIT-compiled kernels warm in the children).  The aggregate is total steps
over the slowest worker's elapsed time, with a barrier so all workers time
the same window.
"""

import json
import multiprocessing as mp
import os
import time

from .config import RunConfig
from .rng import substream
from .scene import generate_scene
from .simcore import Action
from .tasks import env_step, make_episode, reset

_BENCH_SCENE_SEED = 424242
_N_EPISODES = 16


def _bench_setup(cfg: RunConfig):
    scene = generate_scene(_BENCH_SCENE_SEED, cfg.scene_gen)
    rng = substream(cfg.seed, "bench-episodes")
    ped = 3 if cfg.task == "socialnav" else 0
    eps = [make_episode(scene, rng, cfg.task, ped,
                        sim=cfg.sim, cfg=cfg.episode)
           for _ in range(_N_EPISODES)]
    return scene, eps


def _run_steps(cfg, scene, eps, rng, n_steps, cursor=0):
    state, _ = reset(scene, eps[cursor % len(eps)], sim=cfg.sim,
                     sensor=cfg.sensor, reward_cfg=cfg.reward,
                     episode_cfg=cfg.episode)
    v, w = cfg.sim.v_max, cfg.sim.omega_max
    for _ in range(n_steps):
        act = Action(float(rng.uniform(-v, v)), float(rng.uniform(-w, w)),
                     v_max=v, omega_max=w)
        out = env_step(state, act)
        if out.done:
            cursor += 1
            state, _ = reset(scene, eps[cursor % len(eps)], sim=cfg.sim,
                             sensor=cfg.sensor, reward_cfg=cfg.reward,
                             episode_cfg=cfg.episode)
    return cursor


def bench_single(cfg: RunConfig, n_steps: int = 20000,
                 warmup: int = 2000) -> float:
    """Steps per second for one worker (includes in-episode resets)."""
    scene, eps = _bench_setup(cfg)
    rng = substream(cfg.seed, "bench", 0)
    cursor = _run_steps(cfg, scene, eps, rng, warmup)
    t0 = time.perf_counter()
    _run_steps(cfg, scene, eps, rng, n_steps, cursor)
    return n_steps / (time.perf_counter() - t0)


def _worker(cfg, worker_id, n_steps, warmup, barrier, out_q):
    scene, eps = _bench_setup(cfg)
    rng = substream(cfg.seed, "bench", worker_id)
    cursor = _run_steps(cfg, scene, eps, rng, warmup)
    barrier.wait()
    t0 = time.perf_counter()
    _run_steps(cfg, scene, eps, rng, n_steps, cursor)
    out_q.put((worker_id, n_steps, time.perf_counter() - t0))


def bench_workers(cfg: RunConfig, k: int, n_steps: int = 20000,
                  warmup: int = 2000) -> dict:
    """K concurrent processes; aggregate = total steps / slowest elapsed."""
    ctx = mp.get_context("fork")
    barrier = ctx.Barrier(k)
    out_q = ctx.Queue()
    procs = [ctx.Process(target=_worker,
                         args=(cfg, i, n_steps, warmup, barrier, out_q))
             for i in range(k)]
    for p in procs:
        p.start()
    results = [out_q.get() for _ in range(k)]
    for p in procs:
        p.join()
    total = sum(r[1] for r in results)
    slowest = max(r[2] for r in results)
    return {"workers": k, "total_steps": total,
            "aggregate_steps_per_sec": total / slowest,
            "per_worker_steps_per_sec": sorted(
                r[1] / r[2] for r in results)}


def run_benchmark(cfg: RunConfig, workers: int = 8,
                  n_steps: int = 20000) -> dict:
    single = bench_single(cfg, n_steps)
    report = {
        "task": cfg.task,
        "flavor": cfg.sensor.flavor,
        "resolution": [cfg.sensor.height, cfg.sensor.width],
        "cpu_count": os.cpu_count(),
        "single_steps_per_sec": single,
        "workers": workers,
    }
    if workers > 1:
        multi = bench_workers(cfg, workers, n_steps)
        report["aggregate_steps_per_sec"] = multi["aggregate_steps_per_sec"]
        report["per_worker_steps_per_sec"] = multi["per_worker_steps_per_sec"]
        report["scaling_vs_single"] = (multi["aggregate_steps_per_sec"]
                                       / single)
    return report


def write_report(path, report: dict) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
