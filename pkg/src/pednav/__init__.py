"""High-throughput 2.5D indoor navigation: procedural scenes, a raycast
depth sensor, dynamic-pedestrian augmentation, and recurrent PPO."""

from .config import RunConfig, load_yaml, save_yaml, set_flavor
from .scene import (Scene, compute_distance_field, generate_scene,
                    load_scene, sample_navigable_point, save_scene,
                    shortest_path)
from .simcore import Action, AgentState, MovableObject, Pedestrian
from .tasks import (EpisodeSpec, Observation, StepOutcome, env_step,
                    make_episode, read_episode_dataset, reset,
                    write_episode_dataset)
from .augment import AUG_PRESETS, apply_pipeline, populate_pedestrians
from .policy import NavPolicy, load_checkpoint, save_checkpoint
from .train import Trainer, compute_gae, ppo_update, synchronized_update
from .evaluation import (MetricsRecord, effort_efficiency, ins, run_eval,
                         select_checkpoint, spl)
from .bench import run_benchmark

__version__ = "0.1.0"

__all__ = [
    "AUG_PRESETS", "Action", "AgentState", "EpisodeSpec", "MetricsRecord",
    "MovableObject", "NavPolicy", "Observation", "Pedestrian", "RunConfig",
    "Scene", "StepOutcome", "Trainer", "apply_pipeline",
    "compute_distance_field", "compute_gae", "effort_efficiency", "env_step",
    "generate_scene", "ins", "load_checkpoint", "load_scene", "load_yaml",
    "make_episode", "populate_pedestrians", "ppo_update", "read_episode_dataset",
    "reset", "run_benchmark", "run_eval", "sample_navigable_point",
    "save_checkpoint", "save_scene", "save_yaml", "select_checkpoint",
    "set_flavor", "shortest_path", "spl", "synchronized_update",
    "write_episode_dataset",
]
