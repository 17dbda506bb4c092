"""Recurrent actor-critic: conv depth encoder with residual blocks, a 2-layer
LSTM core over (features, goal, previous action), a diagonal-Gaussian actor
and a scalar critic.

Two forward paths exist on purpose: step() for rollout collection (one
timestep, batched over envs) and sequence() for PPO updates (whole segment,
chunked at episode boundaries).  Tests hold them to agree to 1e-5.
"""

import math
import pickle
import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import PolicyConfig

LOG_2PI = math.log(2.0 * math.pi)


def conv_out(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)

    def forward(self, x):
        return F.relu(x + self.conv2(F.relu(self.conv1(x))))


class DepthEncoder(nn.Module):
    """Stem + 3 strided downsamples, a residual block at every scale."""

    def __init__(self, cfg: PolicyConfig, in_h: int, in_w: int):
        super().__init__()
        c = cfg.base_channels
        self.in_h, self.in_w = in_h, in_w
        self.stem = nn.Conv2d(1, c, 5, 2, 2)
        self.block1 = ResidualBlock(c)
        self.down1 = nn.Conv2d(c, 2 * c, 3, 2, 1)
        self.block2 = ResidualBlock(2 * c)
        self.down2 = nn.Conv2d(2 * c, 4 * c, 3, 2, 1)
        self.block3 = ResidualBlock(4 * c)
        self.down3 = nn.Conv2d(4 * c, 4 * c, 3, 2, 1)
        self.block4 = ResidualBlock(4 * c)
        h, w = in_h, in_w
        h, w = conv_out(h, 5, 2, 2), conv_out(w, 5, 2, 2)
        for _ in range(3):
            h, w = conv_out(h, 3, 2, 1), conv_out(w, 3, 2, 1)
        if h < 1 or w < 1:
            raise ValueError(f"input {in_h}x{in_w} too small for the encoder")
        self.flat_dim = 4 * c * h * w
        self.fc = nn.Linear(self.flat_dim, cfg.feature_dim)

    def forward(self, depth):
        if depth.shape[-2:] != (self.in_h, self.in_w):
            raise ValueError(f"expected {self.in_h}x{self.in_w} depth, "
                             f"got {tuple(depth.shape[-2:])}")
        x = depth.reshape(-1, 1, self.in_h, self.in_w)
        x = F.relu(self.stem(x))
        x = self.block1(x)
        x = F.relu(self.down1(x))
        x = self.block2(x)
        x = F.relu(self.down2(x))
        x = self.block3(x)
        x = F.relu(self.down3(x))
        x = self.block4(x)
        return F.relu(self.fc(x.reshape(x.shape[0], -1)))


@dataclass
class ActionDistribution:
    """Diagonal Gaussian over (v, omega); log_std is state-independent."""
    mean: torch.Tensor          # (..., 2)
    log_std: torch.Tensor       # (2,)

    def log_prob(self, action: torch.Tensor) -> torch.Tensor:
        var = torch.exp(2.0 * self.log_std)
        q = (action - self.mean) ** 2 / var
        return -0.5 * q.sum(-1) - self.log_std.sum() - LOG_2PI

    def entropy(self) -> torch.Tensor:
        return (self.log_std + 0.5 * (LOG_2PI + 1.0)).sum()

    def sample(self, rng: np.random.Generator, bounds) -> tuple:
        """Returns (raw, clamped) numpy samples; noise comes from the given
        numpy generator so action randomness is worker-seeded, not global."""
        mean = self.mean.detach().cpu().numpy()
        std = np.exp(self.log_std.detach().cpu().numpy())
        raw = mean + std * rng.standard_normal(mean.shape)
        return raw, _clamp_action(raw, bounds)

    def mean_action(self, bounds) -> np.ndarray:
        return _clamp_action(self.mean.detach().cpu().numpy(), bounds)


def _clamp_action(a: np.ndarray, bounds) -> np.ndarray:
    v_max, omega_max = bounds
    out = np.empty_like(a)
    out[..., 0] = np.clip(a[..., 0], -v_max, v_max)
    out[..., 1] = np.clip(a[..., 1], -omega_max, omega_max)
    return out


class NavPolicy(nn.Module):
    def __init__(self, cfg: PolicyConfig, in_h: int, in_w: int,
                 v_max: float = 0.5, omega_max: float = math.pi / 2):
        super().__init__()
        self.cfg = cfg
        self.bounds = (v_max, omega_max)
        self.encoder = DepthEncoder(cfg, in_h, in_w)
        # features + (scaled dist, cos err, sin err) + (scaled prev v, w)
        self.lstm = nn.LSTM(cfg.feature_dim + 5, cfg.lstm_hidden,
                            cfg.lstm_layers)
        self.actor = nn.Linear(cfg.lstm_hidden, 2)
        self.critic = nn.Linear(cfg.lstm_hidden, 1)
        self.log_std_raw = nn.Parameter(
            torch.full((2,), float(cfg.logstd_init)))

    @property
    def log_std(self) -> torch.Tensor:
        return self.log_std_raw.clamp(self.cfg.logstd_min, self.cfg.logstd_max)

    def initial_hidden(self, batch: int):
        shape = (self.cfg.lstm_layers, batch, self.cfg.lstm_hidden)
        return (torch.zeros(shape), torch.zeros(shape))

    def encode_inputs(self, depth, goal_vec, prev_action):
        """depth (..., H, W); goal_vec (..., 2) as (distance, heading error);
        prev_action (..., 2). Returns (..., feature_dim + 5)."""
        feats = self.encoder(depth)
        lead = goal_vec.shape[:-1]
        feats = feats.reshape(*lead, -1)
        dist = goal_vec[..., 0:1] / self.cfg.goal_dist_scale
        err = goal_vec[..., 1]
        prev = torch.stack([prev_action[..., 0] / self.bounds[0],
                            prev_action[..., 1] / self.bounds[1]], dim=-1)
        extra = torch.cat([dist, torch.cos(err).unsqueeze(-1),
                           torch.sin(err).unsqueeze(-1), prev], dim=-1)
        return torch.cat([feats, extra], dim=-1)

    def step(self, inputs, hidden):
        """One timestep, batch of envs: inputs (B, D) -> (dist, value (B,),
        new hidden)."""
        out, hidden = self.lstm(inputs.unsqueeze(0), hidden)
        x = out.squeeze(0)
        return (ActionDistribution(self.actor(x), self.log_std),
                self.critic(x).squeeze(-1), hidden)

    def sequence(self, inputs, hidden, starts):
        """Whole segment: inputs (T, B, D), starts (T, B) bool marking steps
        whose observation begins a fresh episode (hidden zeroed before they
        are consumed).  Runs the LSTM in chunks between reset rows."""
        t_total, batch = inputs.shape[0], inputs.shape[1]
        if starts.shape != (t_total, batch):
            raise ValueError("starts mask shape mismatch")
        reset_rows = [t for t in range(t_total) if bool(starts[t].any())]
        outs = []
        pos = 0
        h, c = hidden
        for t in reset_rows:
            if t > pos:
                out, (h, c) = self.lstm(inputs[pos:t], (h, c))
                outs.append(out)
                pos = t
            keep = (~starts[t]).to(h.dtype).reshape(1, batch, 1)
            h = h * keep
            c = c * keep
        if pos < t_total:
            out, (h, c) = self.lstm(inputs[pos:], (h, c))
            outs.append(out)
        x = torch.cat(outs, dim=0) if len(outs) > 1 else outs[0]
        return (ActionDistribution(self.actor(x), self.log_std),
                self.critic(x).squeeze(-1), (h, c))

    def count_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


# ----------------------------------------------------------- flat parameters


def flat_params(model: nn.Module) -> np.ndarray:
    """Registration-order float32 concatenation of every parameter."""
    with torch.no_grad():
        return np.concatenate([p.detach().cpu().numpy().astype(np.float32).ravel()
                               for p in model.parameters()])


def load_flat_params(model: nn.Module, flat: np.ndarray) -> None:
    want = sum(p.numel() for p in model.parameters())
    if flat.size != want:
        raise ValueError(f"parameter count mismatch: file has {flat.size}, "
                         f"model needs {want}")
    off = 0
    with torch.no_grad():
        for p in model.parameters():
            n = p.numel()
            chunk = torch.from_numpy(
                np.ascontiguousarray(flat[off:off + n], dtype=np.float32))
            p.copy_(chunk.reshape(p.shape).to(p.dtype))
            off += n


# --------------------------------------------------------------- checkpoints


CHECKPOINT_MAGIC = b"PNCK"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, model: nn.Module, arch_hash: bytes, step: int,
                    extra: dict | None = None) -> None:
    """Versioned binary: magic, version, step, arch hash, flat float32
    params, then a pickled trailer (optimizer state, RNG states, env
    snapshots) used for exact training resume."""
    params = flat_params(model)
    blob = pickle.dumps(extra or {}, protocol=4)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQ", CHECKPOINT_VERSION, int(step)))
        f.write(struct.pack("<B", len(arch_hash)))
        f.write(arch_hash)
        f.write(struct.pack("<Q", params.size))
        f.write(params.tobytes())
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)


def load_checkpoint(path, expected_hash: bytes | None = None) -> dict:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    try:
        if data[:4] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        version, step = struct.unpack_from("<IQ", data, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 16
        (hlen,) = struct.unpack_from("<B", data, off)
        off += 1
        arch_hash = data[off:off + hlen]
        off += hlen
        (n_params,) = struct.unpack_from("<Q", data, off)
        off += 8
        params = np.frombuffer(data, dtype="<f4", count=n_params,
                               offset=off).copy()
        off += 4 * n_params
        (blen,) = struct.unpack_from("<Q", data, off)
        off += 8
        extra = pickle.loads(data[off:off + blen])
    except CheckpointError:
        raise
    except Exception as e:
        raise CheckpointError(f"corrupt checkpoint {path}: {e}") from e
    if expected_hash is not None and arch_hash != expected_hash:
        raise CheckpointError(
            f"checkpoint {path} was written for a different network "
            f"configuration (architecture hash mismatch)")
    return {"step": int(step), "params": params, "arch_hash": arch_hash,
            "extra": extra}
