"""Single entry point with subcommands: gen-scenes, train, eval, bench,
transfer-eval.

Every command is deterministic given (config, seed); outputs carry no
timestamps so repeated runs byte-compare equal.  The effective (fully
resolved) config is written next to each command's outputs and reloads to
an identical run.
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .augment import AUG_PRESETS
from .bench import run_benchmark, write_report
from .config import (ConfigError, RunConfig, load_yaml, save_yaml,
                     set_flavor)
from .evaluation import (evaluate_seeds, list_checkpoints, load_policy,
                         run_eval, select_checkpoint, write_records_csv,
                         write_summary_json)
from .rng import derive_seed, substream
from .scene import SceneGenerationError, generate_scene, load_scene, save_scene
from .tasks import make_episode, read_episode_dataset, write_episode_dataset
from .train import Trainer

EVAL_PED_COUNTS = {"pointnav": 0, "socialnav": 3, "interactivenav": 0}


def _build_config(args) -> RunConfig:
    cfg = load_yaml(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "task", None):
        cfg = replace(cfg, task=args.task)
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=str(args.out))
    if getattr(args, "flavor", None):
        cfg = set_flavor(cfg, args.flavor)
    if getattr(args, "workers", None) is not None:
        cfg = replace(cfg, ppo=replace(cfg.ppo, workers=args.workers))
    if getattr(args, "peds", None) is not None:
        cfg = replace(cfg, augment=replace(cfg.augment,
                                           train_ped_count=args.peds))
    if getattr(args, "aug", None) is not None:
        ops = tuple(s for s in args.aug.split(",") if s and s != "none")
        cfg = replace(cfg, augment=replace(cfg.augment, ops=ops))
    if getattr(args, "total_steps", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train,
                                         total_steps=args.total_steps))
    cfg.validate()
    return cfg


def _load_manifest(scenes_dir):
    path = Path(scenes_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json under {scenes_dir}")
    with open(path) as f:
        return json.load(f)


def _load_split_scenes(scenes_dir, manifest, splits) -> dict:
    scenes = {}
    for split in splits:
        for sid in manifest["splits"][split]:
            if sid not in scenes:
                scenes[sid] = load_scene(Path(scenes_dir) / f"{sid}.scene")
    return scenes


def _split_episodes(scenes_dir, manifest, task, split):
    rel = manifest["episodes"][task][split]
    return read_episode_dataset(Path(scenes_dir) / rel)


# ---------------------------------------------------------------- gen-scenes


def cmd_gen_scenes(args) -> int:
    cfg = _build_config(args)
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    counts = {"train": args.count, "val1": args.val1, "val2": args.val2}
    total = sum(counts.values())
    scenes = []
    k = 0
    while len(scenes) < total:
        if k > total + args.count * 10 + 100:
            raise SceneGenerationError("too many failed scene seeds")
        try:
            scenes.append(generate_scene(derive_seed(cfg.seed, "scene", k),
                                         cfg.scene_gen))
        except SceneGenerationError:
            pass
        k += 1
    splits = {}
    off = 0
    for name in ("train", "val1", "val2"):
        splits[name] = [s.id for s in scenes[off:off + counts[name]]]
        off += counts[name]
    by_id = {s.id: s for s in scenes}
    for s in scenes:
        save_scene(s, out / f"{s.id}.scene")

    tasks = args.tasks.split(",") if args.tasks else [cfg.task]
    ep_counts = {"train": args.train_episodes, "val1": args.val_episodes,
                 "val2": args.val_episodes}
    episodes_entry = {}
    for task in tasks:
        episodes_entry[task] = {}
        for split in ("train", "val1", "val2"):
            if not splits[split]:
                continue
            ped = 0 if split == "train" else EVAL_PED_COUNTS[task]
            rng = substream(cfg.seed, "episodes", task, split)
            specs = []
            ids = splits[split]
            for i in range(ep_counts[split]):
                scene = by_id[ids[i % len(ids)]]
                specs.append(make_episode(scene, rng, task, ped,
                                          sim=cfg.sim, cfg=cfg.episode))
            rel = Path("episodes") / task / f"{split}.jsonl"
            (out / rel).parent.mkdir(parents=True, exist_ok=True)
            write_episode_dataset(out / rel, specs)
            episodes_entry[task][split] = str(rel)

    manifest = {"seed": cfg.seed, "splits": splits,
                "episodes": episodes_entry}
    if args.sweep:
        sizes = sorted({int(s) for s in args.sweep.split(",")})
        if sizes[-1] > len(splits["train"]):
            raise ConfigError("sweep size exceeds train scene count")
        manifest["sweep"] = {str(n): splits["train"][:n] for n in sizes}
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    save_yaml(cfg, out / "gen_config.yaml")
    print(f"wrote {total} scenes and {len(tasks)} task dataset(s) to {out}")
    return 0


# --------------------------------------------------------------------- train


def cmd_train(args) -> int:
    cfg = _build_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _load_manifest(args.scenes)
    cfg = replace(cfg, scenes_dir=str(args.scenes))
    save_yaml(cfg, out / "config.yaml")
    scenes = _load_split_scenes(args.scenes, manifest, ["train"])
    episodes = _split_episodes(args.scenes, manifest, cfg.task, "train")
    trainer = Trainer(cfg, scenes, episodes, out_dir=out)
    if args.resume:
        if args.resume == "auto":
            ckpts = list_checkpoints(out)
            if ckpts:
                trainer.restore(ckpts[-1][1])
        else:
            trainer.restore(args.resume)
    result = trainer.run()
    print(json.dumps(result, sort_keys=True))
    return 0


# ---------------------------------------------------------------------- eval


def _run_config(run_dir) -> RunConfig:
    path = Path(run_dir) / "config.yaml"
    if not path.exists():
        raise FileNotFoundError(f"no config.yaml under {run_dir}")
    return load_yaml(path)


def cmd_eval(args) -> int:
    cfg = _run_config(args.runs[0])
    if args.task:
        cfg = replace(cfg, task=args.task)
    scenes_dir = args.scenes or cfg.scenes_dir
    manifest = _load_manifest(scenes_dir)
    scenes = _load_split_scenes(scenes_dir, manifest, ["val1", "val2"])
    sel = _split_episodes(scenes_dir, manifest, cfg.task,
                          cfg.eval.selection_split)
    rep = _split_episodes(scenes_dir, manifest, cfg.task,
                          cfg.eval.reporting_split)
    result = evaluate_seeds(args.runs, scenes, sel, rep, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, seed_res in enumerate(result["per_seed"]):
        write_records_csv(out / f"records_seed{i}.csv", seed_res["records"])
    write_summary_json(out / "summary.json", result["summary"])
    s = result["summary"]["success"]
    print(f"success {s['mean']:.4f} +/- {s['std']:.4f} "
          f"over {result['summary']['seeds']} seed(s)")
    return 0


# --------------------------------------------------------------------- bench


def cmd_bench(args) -> int:
    cfg = _build_config(args)
    report = run_benchmark(cfg, workers=args.workers, n_steps=args.steps)
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        write_report(args.out, report)
    return 0


# ------------------------------------------------------------- transfer-eval


def _preset_label(cfg: RunConfig) -> str:
    key = (tuple(cfg.augment.ops), cfg.augment.train_ped_count)
    for name, (ops, peds) in AUG_PRESETS.items():
        if (tuple(ops), peds) == key:
            return name
    return "custom"


def cmd_transfer_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for run_dir in args.runs:
        cfg = _run_config(run_dir)
        if args.task:
            cfg = replace(cfg, task=args.task)
        scenes_dir = args.scenes or cfg.scenes_dir
        manifest = _load_manifest(scenes_dir)
        scenes = _load_split_scenes(scenes_dir, manifest, ["val1", "val2"])
        sel = _split_episodes(scenes_dir, manifest, cfg.task,
                              cfg.eval.selection_split)
        rep = _split_episodes(scenes_dir, manifest, cfg.task,
                              cfg.eval.reporting_split)
        path, step, sel_success = select_checkpoint(run_dir, scenes, sel, cfg)
        row = {"run_dir": str(run_dir), "label": _preset_label(cfg),
               "selected_step": step, "selection_success": sel_success}
        for flavor in RunConfig.FLAVORS:
            fcfg = set_flavor(cfg, flavor)
            policy, _ = load_policy(path, fcfg)
            _, agg = run_eval(policy, scenes, rep, fcfg)
            row[flavor] = agg
        row["delta"] = {k: row["clean"][k] - row["scan"][k]
                        for k in ("success", "spl", "effort_efficiency",
                                  "ins")}
        rows.append(row)
    by_label = {}
    for row in rows:
        by_label.setdefault(row["label"], []).append(row)
    summary = {"rows": rows, "by_label": {
        label: {
            "runs": len(group),
            "scan_success": sum(r["scan"]["success"] for r in group)
            / len(group),
            "clean_success": sum(r["clean"]["success"] for r in group)
            / len(group),
        } for label, group in sorted(by_label.items())}}
    write_summary_json(out / "transfer_summary.json", summary)
    for row in rows:
        print(f"{row['label']:>14}  scan {row['scan']['success']:.4f}  "
              f"clean {row['clean']['success']:.4f}  "
              f"delta {row['delta']['success']:+.4f}")
    return 0


# ---------------------------------------------------------------------- main


def _add_common(p, seed_default=None):
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--task", choices=RunConfig.TASKS)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pednav",
        description="2.5D indoor navigation: simulate, train, evaluate.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes",
                       help="generate scenes, splits, and episode datasets")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8,
                   help="training scene count")
    p.add_argument("--val1", type=int, default=2)
    p.add_argument("--val2", type=int, default=4)
    p.add_argument("--train-episodes", type=int, default=512)
    p.add_argument("--val-episodes", type=int, default=64)
    p.add_argument("--tasks", help="comma list (default: config task)")
    p.add_argument("--sweep", help="comma list of nested train-subset sizes")
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("train", help="train a policy")
    _add_common(p)
    p.add_argument("--scenes", required=True, help="gen-scenes output dir")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--peds", type=int,
                   help="training pedestrian count override")
    p.add_argument("--aug", help="comma list of image ops, or 'none'")
    p.add_argument("--workers", type=int)
    p.add_argument("--flavor", choices=RunConfig.FLAVORS)
    p.add_argument("--total-steps", type=int, dest="total_steps")
    p.add_argument("--resume", help="checkpoint path or 'auto'")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="select on val1, report on val2")
    p.add_argument("--runs", nargs="+", required=True,
                   help="run directories (one per seed)")
    p.add_argument("--scenes", help="override scenes dir")
    p.add_argument("--task", choices=RunConfig.TASKS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="steps/sec throughput report")
    _add_common(p, seed_default=0)
    p.add_argument("--workers", type=int, default=8)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--flavor", choices=RunConfig.FLAVORS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("transfer-eval",
                       help="evaluate checkpoints under both sensor flavors")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--scenes", help="override scenes dir")
    p.add_argument("--task", choices=RunConfig.TASKS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
