"""Dataclass configs for every tunable constant, with strict YAML round-trip.

All randomness in the system flows from RunConfig.seed through named
substreams (see rng.py), so any component can be varied independently.
"""

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import get_args, get_origin, get_type_hints

import yaml


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- sections


@dataclass
class SceneGenConfig:
    grid_width: int = 120           # cells
    grid_height: int = 120
    resolution: float = 0.05        # m per cell
    rooms_min: int = 2
    rooms_max: int = 6
    doorway_width: float = 0.8      # m, minimum carved opening
    furniture_density: float = 0.05  # fraction of interior area, 0..0.15
    min_room_extent: float = 1.6    # m, rooms never split below this
    max_retries: int = 1000


@dataclass
class SimConfig:
    dt: float = 0.1                 # s, 10 Hz control
    v_max: float = 0.5              # m/s
    omega_max: float = math.pi / 2  # rad/s (90 deg/s)
    agent_radius: float = 0.18
    ped_radius: float = 0.3
    ped_collision_radius: float = 0.3   # center-to-center failure distance
    object_half_extent: float = 0.25    # 0.5 m box footprint
    object_mass: float = 1.0            # kg
    stop_fraction: float = 0.1          # stop when both |v| below this of max


@dataclass
class SensorConfig:
    width: int = 64
    height: int = 64
    hfov: float = math.pi / 2
    vfov: float = math.pi / 2
    max_range: float = 10.0
    camera_height: float = 0.8
    ped_height: float = 1.7        # pedestrians render as cylinders this tall
    object_height: float = 0.5     # movable boxes; walls/furniture full height
    flavor: str = "scan"           # "scan" (noise+dropout) | "clean"
    noise_sigma: float = 0.02      # multiplicative, scan flavor only
    dropout_prob: float = 0.005    # pixels forced to 1.0, scan flavor only
    noise_seed: int = 0


@dataclass
class RewardConfig:
    # r = -(d_new - d_prev) - w1 - w2*(I_back + I_col) + w3*I_suc
    w1: float = 0.002
    w2: float = 0.02
    w3: float = 10.0


@dataclass
class EpisodeConfig:
    dist_min: float = 1.0          # geodesic start-goal separation range, m
    dist_max: float = 30.0
    success_radius: float = 0.2
    max_steps: int = 500
    object_spacing: float = 0.5    # InteractiveNav marks along the path
    object_margin: float = 0.5     # skip marks within this of start/goal
    max_retries: int = 1000


@dataclass
class CropConfig:
    shrink_fraction: float = 0.08


@dataclass
class CutoutConfig:
    aspect_range: tuple = (0.3, 3.33)
    scale_range: tuple = (0.02, 0.33)
    fill_value: float = 0.0
    max_tries: int = 100


@dataclass
class AugmentConfig:
    ops: tuple = ()                # ordered subset of ("crop", "cutout")
    train_ped_count: int = 0       # dynamic-pedestrian augmentation
    crop: CropConfig = field(default_factory=CropConfig)
    cutout: CutoutConfig = field(default_factory=CutoutConfig)


@dataclass
class PolicyConfig:
    base_channels: int = 16
    feature_dim: int = 256
    lstm_hidden: int = 192
    lstm_layers: int = 2
    logstd_init: float = 0.0
    logstd_min: float = -5.0
    logstd_max: float = 2.0
    goal_dist_scale: float = 10.0  # goal distance divided by this before the net


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 2
    minibatches: int = 2           # contiguous time chunks of the rollout
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lr: float = 2.5e-4
    max_grad_norm: float = 0.5
    workers: int = 8
    rollout_t: int = 128
    adv_eps: float = 1e-8


@dataclass
class TrainLoopConfig:
    total_steps: int = 1_000_000
    checkpoint_interval: int = 1_000_000
    log_interval: int = 1          # updates between CSV rows
    success_ema: float = 0.99
    torch_threads: int = 1
    env_threads: int = 1           # >1 steps envs on a thread pool (nogil kernels)


@dataclass
class EvalConfig:
    episodes: int = 64             # per split per task
    seeds: int = 3
    selection_split: str = "val1"
    reporting_split: str = "val2"


@dataclass
class RunConfig:
    run_id: str = "run"
    seed: int = 0
    out_dir: str = "runs/run"
    scenes_dir: str = "scenes"
    task: str = "pointnav"         # pointnav | socialnav | interactivenav
    flavor: str = "scan"           # scan | clean
    scene_gen: SceneGenConfig = field(default_factory=SceneGenConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    train: TrainLoopConfig = field(default_factory=TrainLoopConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    TASKS = ("pointnav", "socialnav", "interactivenav")
    FLAVORS = ("scan", "clean")
    PED_COUNTS = (0, 3, 6, 12, 18)

    def validate(self):
        if self.task not in self.TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.flavor not in self.FLAVORS:
            raise ConfigError(f"unknown flavor {self.flavor!r}")
        if self.sensor.flavor != self.flavor:
            raise ConfigError("run flavor and sensor flavor disagree; "
                              "use set_flavor to change both")
        if not 0 < self.sensor.hfov < math.pi:
            raise ConfigError("hfov must be in (0, pi)")
        if not 0 < self.sensor.vfov < math.pi:
            raise ConfigError("vfov must be in (0, pi)")
        if self.sensor.max_range <= 0:
            raise ConfigError("max_range must be > 0")
        if self.ppo.clip <= 0:
            raise ConfigError("clip must be > 0")
        if self.ppo.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 <= self.ppo.gamma <= 1 or not 0 <= self.ppo.lam <= 1:
            raise ConfigError("gamma and lam must be in [0, 1]")
        if self.ppo.rollout_t % self.ppo.minibatches != 0:
            raise ConfigError("rollout_t must divide evenly into minibatches")
        if min(self.reward.w1, self.reward.w2, self.reward.w3) < 0:
            raise ConfigError("reward weights must be non-negative")
        if self.augment.train_ped_count not in self.PED_COUNTS:
            raise ConfigError(f"train_ped_count must be one of {self.PED_COUNTS}")
        for op in self.augment.ops:
            if op not in ("crop", "cutout"):
                raise ConfigError(f"unknown augmentation op {op!r}")
        if not 0 <= self.scene_gen.furniture_density <= 0.15:
            raise ConfigError("furniture_density must be in [0, 0.15]")
        return self


def set_flavor(cfg: RunConfig, flavor: str) -> RunConfig:
    """New config with both the run-level and sensor flavor switched."""
    if flavor not in RunConfig.FLAVORS:
        raise ConfigError(f"unknown flavor {flavor!r}")
    return dataclasses.replace(
        cfg, flavor=flavor,
        sensor=dataclasses.replace(cfg.sensor, flavor=flavor))


# ------------------------------------------------------- dict/yaml plumbing


def to_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            out[f.name] = to_dict(v)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def from_dict(cls, data: dict, _path: str = ""):
    """Strict construction: unknown keys are rejected, nested sections recurse."""
    if not isinstance(data, dict):
        raise ConfigError(f"expected mapping at {_path or 'top level'}")
    hints = get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {_path}{key!r}")
        hint = hints.get(key)
        if dataclasses.is_dataclass(hint):
            val = from_dict(hint, val, _path=f"{_path}{key}.")
        elif hint is tuple or get_origin(hint) is tuple:
            val = tuple(val)
        kwargs[key] = val
    return cls(**kwargs)


def save_yaml(cfg, path):
    with open(path, "w") as f:
        yaml.safe_dump(to_dict(cfg), f, sort_keys=True)


def load_yaml(path, cls=RunConfig):
    with open(path) as f:
        data = yaml.safe_load(f)
    return from_dict(cls, data or {})


def canonical_json(cfg) -> str:
    return json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))


def policy_arch_hash(run_cfg: RunConfig) -> bytes:
    """sha256 over everything that determines checkpoint compatibility.

    Covers the network architecture and its input contract (sensor dims and
    the crop op, which change the conv input size); training-schedule knobs
    deliberately excluded so evaluation configs can load training checkpoints.
    """
    payload = {
        "policy": to_dict(run_cfg.policy),
        "input": [run_cfg.sensor.height, run_cfg.sensor.width],
        "crop": ["crop" in run_cfg.augment.ops,
                 run_cfg.augment.crop.shrink_fraction],
        "bounds": [run_cfg.sim.v_max, run_cfg.sim.omega_max],
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).digest()


def policy_input_dims(run_cfg: RunConfig) -> tuple:
    """(H, W) the network actually sees, after any crop in the pipeline."""
    h, w = run_cfg.sensor.height, run_cfg.sensor.width
    if "crop" in run_cfg.augment.ops:
        s = run_cfg.augment.crop.shrink_fraction
        h, w = int((1 - s) * h), int((1 - s) * w)
    return h, w
