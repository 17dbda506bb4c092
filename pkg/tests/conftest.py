import math
from dataclasses import replace

import pytest

from pednav.config import RunConfig
from pednav.rng import substream
from pednav.scene import generate_scene
from pednav.tasks import make_episode


def tiny_config(seed: int = 7, **kw) -> RunConfig:
    """Small everything: 80x80 cells, 48x48 depth, narrow net, 2 workers."""
    cfg = RunConfig(run_id="tiny", seed=seed)
    cfg = replace(
        cfg,
        scene_gen=replace(cfg.scene_gen, grid_width=80, grid_height=80,
                          rooms_min=1, rooms_max=2, furniture_density=0.01),
        sensor=replace(cfg.sensor, height=48, width=48),
        policy=replace(cfg.policy, base_channels=4, feature_dim=32,
                       lstm_hidden=32),
        ppo=replace(cfg.ppo, workers=2, rollout_t=8),
        train=replace(cfg.train, total_steps=64, checkpoint_interval=32))
    return replace(cfg, **kw) if kw else cfg


@pytest.fixture(scope="session")
def small_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def small_scene(small_cfg):
    return generate_scene(11, small_cfg.scene_gen)


@pytest.fixture(scope="session")
def small_episodes(small_cfg, small_scene):
    rng = substream(3, "test-episodes")
    return [make_episode(small_scene, rng, "pointnav", 0,
                         sim=small_cfg.sim, cfg=small_cfg.episode)
            for _ in range(8)]
