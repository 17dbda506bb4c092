import math
from dataclasses import replace

import pytest

from pednav.config import (ConfigError, RunConfig, from_dict, load_yaml,
                           policy_arch_hash, policy_input_dims, save_yaml,
                           set_flavor, to_dict)


def test_dict_round_trip():
    cfg = RunConfig(run_id="x", seed=9)
    again = from_dict(RunConfig, to_dict(cfg))
    assert again == cfg


def test_unknown_key_rejected():
    data = to_dict(RunConfig())
    data["no_such_key"] = 1
    with pytest.raises(ConfigError):
        from_dict(RunConfig, data)


def test_nested_unknown_key_rejected():
    data = to_dict(RunConfig())
    data["ppo"]["no_such_key"] = 1
    with pytest.raises(ConfigError):
        from_dict(RunConfig, data)


def test_yaml_round_trip(tmp_path):
    cfg = replace(RunConfig(run_id="y", seed=3),
                  augment=replace(RunConfig().augment, ops=("crop",)))
    path = tmp_path / "c.yaml"
    save_yaml(cfg, path)
    assert load_yaml(path) == cfg


def test_validate_rejects_bad_task():
    with pytest.raises(ConfigError):
        replace(RunConfig(), task="flynav").validate()


def test_validate_rejects_bad_ped_count():
    cfg = RunConfig()
    cfg = replace(cfg, augment=replace(cfg.augment, train_ped_count=5))
    with pytest.raises(ConfigError):
        cfg.validate()


def test_validate_rejects_flavor_mismatch():
    cfg = RunConfig()
    cfg = replace(cfg, flavor="clean")  # sensor still scan
    with pytest.raises(ConfigError):
        cfg.validate()


def test_set_flavor_switches_both():
    cfg = set_flavor(RunConfig(), "clean")
    assert cfg.flavor == "clean" and cfg.sensor.flavor == "clean"
    cfg.validate()


def test_validate_rejects_uneven_minibatches():
    cfg = RunConfig()
    cfg = replace(cfg, ppo=replace(cfg.ppo, rollout_t=10, minibatches=4))
    with pytest.raises(ConfigError):
        cfg.validate()


def test_input_dims_follow_crop():
    cfg = RunConfig()
    assert policy_input_dims(cfg) == (64, 64)
    cfg = replace(cfg, augment=replace(cfg.augment, ops=("crop",)))
    assert policy_input_dims(cfg) == (58, 58)  # floor(0.92 * 64)


def test_arch_hash_sensitivity():
    base = RunConfig()
    assert policy_arch_hash(base) == policy_arch_hash(RunConfig())
    wider = replace(base, policy=replace(base.policy, lstm_hidden=128))
    assert policy_arch_hash(wider) != policy_arch_hash(base)
    cropped = replace(base, augment=replace(base.augment, ops=("crop",)))
    assert policy_arch_hash(cropped) != policy_arch_hash(base)
    # training-loop knobs must not change the architecture identity
    longer = replace(base, train=replace(base.train, total_steps=5))
    assert policy_arch_hash(longer) == policy_arch_hash(base)
