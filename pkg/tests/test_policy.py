import math

import numpy as np
import pytest
import torch

from pednav.config import PolicyConfig, policy_arch_hash, policy_input_dims
from pednav.policy import (LOG_2PI, ActionDistribution, CheckpointError,
                           DepthEncoder, NavPolicy, conv_out, flat_params,
                           load_checkpoint, load_flat_params,
                           save_checkpoint)
from pednav.rng import substream

CFG = PolicyConfig(base_channels=4, feature_dim=32, lstm_hidden=32)


def make_policy(seed=0, cfg=CFG, h=48, w=48):
    torch.manual_seed(seed)
    return NavPolicy(cfg, h, w)


def rand_inputs(policy, batch, rng):
    depth = torch.tensor(rng.uniform(0, 1, (batch, 48, 48)),
                         dtype=torch.float32)
    goal = torch.tensor(rng.uniform(0, 5, (batch, 2)), dtype=torch.float32)
    prev = torch.tensor(rng.uniform(-0.5, 0.5, (batch, 2)),
                        dtype=torch.float32)
    return policy.encode_inputs(depth, goal, prev)


def test_conv_out_matches_torch():
    x = torch.zeros(1, 1, 37, 53)
    layer = torch.nn.Conv2d(1, 1, 5, stride=2, padding=2)
    assert layer(x).shape[-2:] == (conv_out(37, 5, 2, 2), conv_out(53, 5, 2, 2))


@pytest.mark.parametrize("h,w", [(64, 64), (58, 58), (48, 48)])
def test_encoder_output_shape(h, w):
    torch.manual_seed(0)
    enc = DepthEncoder(CFG, h, w)
    out = enc(torch.zeros(3, h, w))
    assert out.shape == (3, CFG.feature_dim)


def test_encoder_rejects_wrong_dims():
    torch.manual_seed(0)
    enc = DepthEncoder(CFG, 48, 48)
    with pytest.raises(ValueError):
        enc(torch.zeros(2, 64, 64))


def test_log_prob_at_mean():
    mean = torch.tensor([[0.3, -0.2]])
    dist = ActionDistribution(mean, torch.zeros(2))
    lp = dist.log_prob(mean)
    assert torch.allclose(lp, torch.tensor([-LOG_2PI]), atol=1e-6)


def test_log_prob_gaussian_closed_form():
    mean = torch.tensor([0.1, 0.4])
    log_std = torch.tensor([0.2, -0.3])
    act = torch.tensor([0.5, 0.0])
    dist = ActionDistribution(mean, log_std)
    expect = sum(
        -0.5 * ((a - m) / math.exp(s)) ** 2 - s - 0.5 * math.log(2 * math.pi)
        for a, m, s in zip(act.tolist(), mean.tolist(), log_std.tolist()))
    assert math.isclose(float(dist.log_prob(act)), expect, rel_tol=1e-6)


def test_entropy_closed_form():
    dist = ActionDistribution(torch.zeros(2), torch.zeros(2))
    expect = 2 * 0.5 * (math.log(2 * math.pi) + 1.0)
    assert math.isclose(float(dist.entropy()), expect, rel_tol=1e-6)
    assert math.isclose(expect, 2.8379, abs_tol=5e-5)
    # entropy grows with log_std
    wider = ActionDistribution(torch.zeros(2), torch.full((2,), 0.5))
    assert float(wider.entropy()) > float(dist.entropy())


def test_sample_clamped_within_bounds():
    dist = ActionDistribution(torch.zeros(2), torch.full((2,), 2.0))
    rng = substream(0, "sample")
    bounds = (0.5, math.pi / 2)
    raws, clamps = [], []
    for _ in range(200):
        raw, cl = dist.sample(rng, bounds)
        raws.append(raw)
        clamps.append(cl)
    raws = np.array(raws)
    clamps = np.array(clamps)
    assert np.all(np.abs(clamps[:, 0]) <= bounds[0] + 1e-12)
    assert np.all(np.abs(clamps[:, 1]) <= bounds[1] + 1e-12)
    assert np.any(np.abs(raws[:, 0]) > bounds[0])   # raw tail survives
    agree = np.abs(raws) <= np.array(bounds)
    assert np.all(clamps[agree] == raws[agree])


def test_mean_action_is_deterministic_and_clamped():
    dist = ActionDistribution(torch.tensor([3.0, -9.0]), torch.zeros(2))
    a = dist.mean_action((0.5, math.pi / 2))
    assert a[0] == 0.5 and a[1] == -math.pi / 2


def test_log_std_clamp():
    policy = make_policy()
    with torch.no_grad():
        policy.log_std_raw.fill_(100.0)
        assert float(policy.log_std.max()) <= policy.cfg.logstd_max
        policy.log_std_raw.fill_(-100.0)
        assert float(policy.log_std.min()) >= policy.cfg.logstd_min


def test_step_sequence_parity():
    policy = make_policy(3)
    rng = np.random.default_rng(5)
    t_len, batch = 12, 3
    inputs = torch.stack([rand_inputs(policy, batch, rng)
                          for _ in range(t_len)])
    starts = torch.zeros(t_len, batch, dtype=torch.bool)
    starts[0, :] = True
    starts[5, 1] = True
    starts[9, 0] = True

    hidden = policy.initial_hidden(batch)
    means, values = [], []
    with torch.no_grad():
        h = hidden
        for t in range(t_len):
            mask = ~starts[t]
            h = (h[0] * mask.view(1, -1, 1), h[1] * mask.view(1, -1, 1))
            dist, val, h = policy.step(inputs[t], h)
            means.append(dist.mean)
            values.append(val)
        seq_dist, seq_val, _ = policy.sequence(inputs, hidden, starts)
    assert torch.allclose(seq_dist.mean, torch.stack(means), atol=1e-5)
    assert torch.allclose(seq_val, torch.stack(values), atol=1e-5)


def test_sequence_reset_blocks_history():
    """A mid-segment start makes the suffix independent of the prefix."""
    policy = make_policy(4)
    rng = np.random.default_rng(6)
    t_len, batch = 8, 2
    inputs = torch.stack([rand_inputs(policy, batch, rng)
                          for _ in range(t_len)])
    starts = torch.zeros(t_len, batch, dtype=torch.bool)
    starts[4, :] = True
    with torch.no_grad():
        d1, v1, _ = policy.sequence(inputs, policy.initial_hidden(batch),
                                    starts)
        # scramble the prefix; suffix outputs must not move
        inputs2 = inputs.clone()
        inputs2[:4] = inputs2[:4].flip(0) * 0.37 + 1.0
        d2, v2, _ = policy.sequence(inputs2, policy.initial_hidden(batch),
                                    starts)
    assert torch.allclose(d1.mean[4:], d2.mean[4:], atol=1e-7)
    assert torch.allclose(v1[4:], v2[4:], atol=1e-7)
    assert not torch.allclose(d1.mean[:4], d2.mean[:4], atol=1e-3)


def test_flat_params_round_trip():
    a = make_policy(7)
    b = make_policy(8)
    flat = flat_params(a)
    assert flat.dtype == np.float32
    assert flat.size == a.count_parameters()
    load_flat_params(b, flat)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    with pytest.raises(ValueError):
        load_flat_params(b, flat[:-1])


def test_checkpoint_round_trip(tmp_path):
    policy = make_policy(9)
    arch = policy_arch_hash_for(policy)
    path = tmp_path / "ck.bin"
    save_checkpoint(path, policy, arch, step=1234,
                    extra={"note": [1, 2, 3]})
    ck = load_checkpoint(path, expected_hash=arch)
    assert ck["step"] == 1234
    assert ck["extra"] == {"note": [1, 2, 3]}
    other = make_policy(10)
    load_flat_params(other, ck["params"])
    for pa, pb in zip(policy.parameters(), other.parameters()):
        assert torch.equal(pa, pb)


def policy_arch_hash_for(policy):
    from pednav.config import RunConfig
    from dataclasses import replace
    cfg = RunConfig()
    cfg = replace(cfg, policy=policy.cfg,
                  sensor=replace(cfg.sensor, height=48, width=48))
    return policy_arch_hash(cfg)


def test_checkpoint_refuses_wrong_arch(tmp_path):
    policy = make_policy(11)
    path = tmp_path / "ck.bin"
    save_checkpoint(path, policy, b"\x01" * 16, step=1)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expected_hash=b"\x02" * 16)
    # no expected hash -> loads fine
    assert load_checkpoint(path)["step"] == 1


def test_checkpoint_refuses_garbage(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    missing = tmp_path / "nope.bin"
    with pytest.raises(CheckpointError):
        load_checkpoint(missing)
    trunc = tmp_path / "trunc.bin"
    policy = make_policy(12)
    save_checkpoint(trunc, policy, b"\x01" * 16, step=1)
    data = trunc.read_bytes()
    trunc.write_bytes(data[:len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(trunc)


def test_arch_hash_tracks_input_dims():
    from pednav.config import RunConfig
    from dataclasses import replace
    base = RunConfig()
    crop = replace(base, augment=replace(base.augment, ops=("crop",)))
    assert policy_input_dims(base) == (64, 64)
    assert policy_input_dims(crop) == (58, 58)
    assert policy_arch_hash(base) != policy_arch_hash(crop)


def test_encode_inputs_layout():
    policy = make_policy(13)
    depth = torch.zeros(2, 48, 48)
    goal = torch.tensor([[3.0, 0.0], [3.0, math.pi / 2]])
    prev = torch.tensor([[0.5, 0.0], [0.0, -math.pi / 2]])
    enc = policy.encode_inputs(depth, goal, prev)
    assert enc.shape == (2, policy.cfg.feature_dim + 5)
    tail = enc[:, policy.cfg.feature_dim:]
    scale = policy.cfg.goal_dist_scale
    assert torch.allclose(tail[0], torch.tensor(
        [3.0 / scale, 1.0, 0.0, 1.0, 0.0]), atol=1e-6)
    assert torch.allclose(tail[1], torch.tensor(
        [3.0 / scale, 0.0, 1.0, 0.0, -1.0]), atol=1e-6)
