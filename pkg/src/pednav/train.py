"""PPO with GAE over recurrent rollout segments.

The trainer drives W environments in lockstep through batched policy steps
(one process, vectorized over envs); synchronized_update implements the
distributed contract where each worker differentiates its own segment and
gradients are averaged elementwise.  Both routes produce the same parameters
on the same data, which the tests pin to 1e-6.

Everything is deterministic given the run seed: action noise and
augmentation draw from per-worker numpy substreams, and checkpoints carry
optimizer state, RNG states, and env snapshots so a resumed run is
bit-identical to an uninterrupted one.
"""

import copy
import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .augment import apply_pipeline
from .config import PPOConfig, RunConfig, policy_arch_hash, policy_input_dims
from .policy import (NavPolicy, load_checkpoint, load_flat_params,
                     save_checkpoint)
from .rng import derive_seed, substream
from .simcore import Action
from .tasks import Observation, env_restore, env_snapshot, env_step, reset


@dataclass
class RolloutBuffer:
    """W workers x T steps of post-augmentation observations and transition
    data, plus the LSTM state at every minibatch chunk boundary."""
    t_len: int
    workers: int
    depth: np.ndarray           # (T, W, H, W') float32
    goal: np.ndarray            # (T, W, 2) float32
    prev: np.ndarray            # (T, W, 2) float32
    action_raw: np.ndarray      # (T, W, 2) float32, pre-clamp sample
    log_prob: np.ndarray        # (T, W) float32, from the collecting policy
    value: np.ndarray           # (T, W) float32
    reward: np.ndarray          # (T, W) float64
    done: np.ndarray            # (T, W) bool, transition ended the episode
    starts: np.ndarray          # (T, W) bool, obs begins a fresh episode
    bootstrap: np.ndarray       # (W,) float32 value of obs after the segment
    chunk_hidden: list = field(default_factory=list)   # [(h, c)] per chunk

    @classmethod
    def allocate(cls, t_len, workers, obs_h, obs_w):
        return cls(
            t_len=t_len, workers=workers,
            depth=np.zeros((t_len, workers, obs_h, obs_w), np.float32),
            goal=np.zeros((t_len, workers, 2), np.float32),
            prev=np.zeros((t_len, workers, 2), np.float32),
            action_raw=np.zeros((t_len, workers, 2), np.float32),
            log_prob=np.zeros((t_len, workers), np.float32),
            value=np.zeros((t_len, workers), np.float32),
            reward=np.zeros((t_len, workers), np.float64),
            done=np.zeros((t_len, workers), bool),
            starts=np.zeros((t_len, workers), bool),
            bootstrap=np.zeros(workers, np.float32))


def compute_gae(rewards, values, dones, bootstrap,
                gamma: float, lam: float):
    """delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t;
    A_t = delta_t + gamma*lam*(1-done_t)*A_{t+1}; returns = A + V.
    Accumulates in float64; shapes (T, W) with bootstrap (W,)."""
    r = np.asarray(rewards, np.float64)
    v = np.asarray(values, np.float64)
    d = np.asarray(dones, np.float64)
    t_len = r.shape[0]
    adv = np.zeros_like(r)
    carry = np.zeros(r.shape[1:], np.float64)
    next_v = np.asarray(bootstrap, np.float64)
    for t in range(t_len - 1, -1, -1):
        live = 1.0 - d[t]
        delta = r[t] + gamma * next_v * live - v[t]
        carry = delta + gamma * lam * live * carry
        adv[t] = carry
        next_v = v[t]
    return adv, adv + v


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Pooled (whole update batch) mean-0 std-1 normalization in float64."""
    a = np.asarray(adv, np.float64)
    return ((a - a.mean()) / (a.std() + eps)).astype(np.float32)


def split_buffer(buf: RolloutBuffer):
    """Per-worker single-column views of a pooled segment, for feeding
    synchronized_update as if each worker had collected its own slice."""
    out = []
    for i in range(buf.workers):
        sl = slice(i, i + 1)
        out.append(RolloutBuffer(
            t_len=buf.t_len, workers=1,
            depth=buf.depth[:, sl], goal=buf.goal[:, sl],
            prev=buf.prev[:, sl], action_raw=buf.action_raw[:, sl],
            log_prob=buf.log_prob[:, sl], value=buf.value[:, sl],
            reward=buf.reward[:, sl], done=buf.done[:, sl],
            starts=buf.starts[:, sl], bootstrap=buf.bootstrap[sl],
            chunk_hidden=[(h[:, sl].clone(), c[:, sl].clone())
                          for h, c in buf.chunk_hidden]))
    return out


# ------------------------------------------------------------------ updates


def _chunk_slices(t_len: int, minibatches: int):
    if t_len % minibatches != 0:
        raise ValueError("rollout length must divide into minibatches")
    step = t_len // minibatches
    return [slice(m * step, (m + 1) * step) for m in range(minibatches)]


def _chunk_loss(policy: NavPolicy, buf: RolloutBuffer, adv, ret, sl, cfg):
    """PPO clipped surrogate + value + entropy on one contiguous time chunk.
    Returns (loss, stats)."""
    depth = torch.from_numpy(buf.depth[sl])
    goal = torch.from_numpy(buf.goal[sl])
    prev = torch.from_numpy(buf.prev[sl])
    act = torch.from_numpy(buf.action_raw[sl])
    old_logp = torch.from_numpy(buf.log_prob[sl])
    starts = torch.from_numpy(buf.starts[sl])
    adv_t = torch.from_numpy(adv[sl])
    ret_t = torch.from_numpy(np.asarray(ret[sl], np.float32))
    h, c = buf.chunk_hidden[sl.start // (sl.stop - sl.start)]
    inputs = policy.encode_inputs(depth, goal, prev)
    dist, values, _ = policy.sequence(inputs, (h, c), starts)
    logp = dist.log_prob(act)
    ratio = torch.exp(logp - old_logp)
    clipped = torch.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
    policy_loss = -torch.min(ratio * adv_t, clipped * adv_t).mean()
    value_loss = 0.5 * ((values - ret_t) ** 2).mean()
    entropy = dist.entropy()
    loss = (policy_loss + cfg.value_coef * value_loss
            - cfg.entropy_coef * entropy)
    with torch.no_grad():
        clip_frac = ((ratio - 1.0).abs() > cfg.clip).float().mean()
        approx_kl = (old_logp - logp).mean()
    stats = {"policy_loss": float(policy_loss.detach()),
             "value_loss": float(value_loss.detach()),
             "entropy": float(entropy.detach()),
             "clip_frac": float(clip_frac), "approx_kl": float(approx_kl)}
    return loss, stats


def _snapshot_state(policy, optimizer):
    return ({k: v.clone() for k, v in policy.state_dict().items()},
            copy.deepcopy(optimizer.state_dict()))


def _restore_state(policy, optimizer, snap):
    params, opt = snap
    policy.load_state_dict(params)
    optimizer.load_state_dict(opt)


def _grads_finite(policy) -> bool:
    for p in policy.parameters():
        if p.grad is not None and not bool(torch.isfinite(p.grad).all()):
            return False
    return True


def ppo_update(policy: NavPolicy, optimizer, buf: RolloutBuffer,
               adv: np.ndarray, ret: np.ndarray, cfg: PPOConfig) -> dict:
    """Clipped PPO over epochs x contiguous time chunks, in fixed order.
    A non-finite loss or gradient aborts the whole update and restores the
    parameters and optimizer state from before it."""
    snap = _snapshot_state(policy, optimizer)
    agg = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
           "clip_frac": 0.0, "approx_kl": 0.0}
    passes = 0
    for _ in range(cfg.epochs):
        for sl in _chunk_slices(buf.t_len, cfg.minibatches):
            loss, stats = _chunk_loss(policy, buf, adv, ret, sl, cfg)
            optimizer.zero_grad(set_to_none=True)
            if not bool(torch.isfinite(loss)):
                _restore_state(policy, optimizer, snap)
                return {**agg, "aborted": True, "passes": passes}
            loss.backward()
            if not _grads_finite(policy):
                _restore_state(policy, optimizer, snap)
                return {**agg, "aborted": True, "passes": passes}
            torch.nn.utils.clip_grad_norm_(policy.parameters(),
                                           cfg.max_grad_norm)
            optimizer.step()
            for k in agg:
                agg[k] += stats[k]
            passes += 1
    for k in agg:
        agg[k] /= max(passes, 1)
    return {**agg, "aborted": False, "passes": passes}


def synchronized_update(policy: NavPolicy, optimizer, buffers: list,
                        advs: list, rets: list, cfg: PPOConfig) -> dict:
    """Distributed-PPO contract: every worker differentiates its own segment
    chunk, gradients are averaged elementwise in fixed worker order, and one
    optimizer step is applied per epoch/chunk.  Matches ppo_update on the
    horizontally stacked batch to float tolerance (same chunk order, same
    per-element weighting)."""
    if not buffers:
        raise ValueError("need at least one worker segment")
    k = len(buffers)
    snap = _snapshot_state(policy, optimizer)
    agg = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
           "clip_frac": 0.0, "approx_kl": 0.0}
    passes = 0
    params = list(policy.parameters())
    for _ in range(cfg.epochs):
        for sl in _chunk_slices(buffers[0].t_len, cfg.minibatches):
            grad_sum = [torch.zeros_like(p) for p in params]
            pass_stats = {key: 0.0 for key in agg}
            for buf, adv, ret in zip(buffers, advs, rets):
                loss, stats = _chunk_loss(policy, buf, adv, ret, sl, cfg)
                optimizer.zero_grad(set_to_none=True)
                if not bool(torch.isfinite(loss)):
                    _restore_state(policy, optimizer, snap)
                    return {**agg, "aborted": True, "passes": passes}
                loss.backward()
                if not _grads_finite(policy):
                    _restore_state(policy, optimizer, snap)
                    return {**agg, "aborted": True, "passes": passes}
                for g, p in zip(grad_sum, params):
                    if p.grad is not None:
                        g.add_(p.grad)
                for key in pass_stats:
                    pass_stats[key] += stats[key]
            optimizer.zero_grad(set_to_none=True)
            for g, p in zip(grad_sum, params):
                p.grad = g / k
            torch.nn.utils.clip_grad_norm_(params, cfg.max_grad_norm)
            optimizer.step()
            for key in agg:
                agg[key] += pass_stats[key] / k
            passes += 1
    for key in agg:
        agg[key] /= max(passes, 1)
    return {**agg, "aborted": False, "passes": passes}


# ------------------------------------------------------------------ trainer


def _optim_to_numpy(obj):
    """Pickling torch tensors embeds process-local storage keys, so equal
    optimizer states serialize to different bytes across runs; numpy arrays
    round-trip byte-stably."""
    if torch.is_tensor(obj):
        return ("__tensor__", obj.detach().cpu().numpy())
    if isinstance(obj, dict):
        return {k: _optim_to_numpy(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        out = [_optim_to_numpy(v) for v in obj]
        return out if isinstance(obj, list) else tuple(out)
    return obj


def _optim_from_numpy(obj):
    if isinstance(obj, tuple) and len(obj) == 2 and obj[0] == "__tensor__":
        return torch.from_numpy(np.asarray(obj[1]).copy())
    if isinstance(obj, dict):
        return {k: _optim_from_numpy(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        out = [_optim_from_numpy(v) for v in obj]
        return out if isinstance(obj, list) else tuple(out)
    return obj


class Trainer:
    """Synchronous vectorized PPO over cfg.ppo.workers environments.

    Episodes come from a fixed train dataset; worker w cycles specs
    w, w+W, w+2W, ... so runs replay exactly.  The configured augmentation
    overrides each spec's pedestrian count (that is the dynamic-pedestrian
    augmentation) and transforms observations before they reach the policy.
    """

    def __init__(self, cfg: RunConfig, scenes: dict, episodes: list,
                 out_dir=None):
        cfg.validate()
        if not episodes:
            raise ValueError("empty training episode list")
        self.cfg = cfg
        self.scenes = scenes
        self.episodes = episodes
        self.out_dir = Path(out_dir if out_dir is not None else cfg.out_dir)
        torch.set_num_threads(max(1, cfg.train.torch_threads))
        self.obs_h, self.obs_w = policy_input_dims(cfg)
        torch.manual_seed(derive_seed(cfg.seed, "policy-init"))
        self.policy = NavPolicy(cfg.policy, self.obs_h, self.obs_w,
                                cfg.sim.v_max, cfg.sim.omega_max)
        self.optimizer = torch.optim.Adam(self.policy.parameters(),
                                          lr=cfg.ppo.lr)
        self.arch_hash = policy_arch_hash(cfg)
        w = cfg.ppo.workers
        self.act_rng = [substream(cfg.seed, "act", i) for i in range(w)]
        self.aug_rng = [substream(cfg.seed, "aug", i) for i in range(w)]
        self.cursor = list(range(w))
        self.states = []
        self.cur_obs = []
        for i in range(w):
            state, obs = self._reset_worker(i)
            self.states.append(state)
            self.cur_obs.append(obs)
        self.hidden = self.policy.initial_hidden(w)
        self.pending_reset = [False] * w
        self.env_steps = 0
        self.update_count = 0
        self.success_ema = 0.0
        self.abort_count = 0
        self._ep_return = [0.0] * w
        self._window_returns = []
        self.recent_successes = []

    # -- episode plumbing

    def _next_spec(self, worker: int):
        spec = self.episodes[self.cursor[worker] % len(self.episodes)]
        self.cursor[worker] += self.cfg.ppo.workers
        return replace(spec,
                       train_ped_count=self.cfg.augment.train_ped_count)

    def _reset_worker(self, worker: int):
        spec = self._next_spec(worker)
        scene = self.scenes[spec.scene_id]
        state, obs = reset(scene, spec, sim=self.cfg.sim,
                           sensor=self.cfg.sensor, reward_cfg=self.cfg.reward,
                           episode_cfg=self.cfg.episode)
        obs = apply_pipeline(obs, self.cfg.augment, self.aug_rng[worker],
                             "train")
        return state, obs

    def _record_episode_end(self, worker: int):
        state = self.states[worker]
        success = 1.0 if state.outcome == "success" else 0.0
        a = self.cfg.train.success_ema
        self.success_ema = a * self.success_ema + (1.0 - a) * success
        self._window_returns.append(self._ep_return[worker])
        self.recent_successes.append(success)
        if len(self.recent_successes) > 100:
            self.recent_successes.pop(0)
        self._ep_return[worker] = 0.0

    # -- collection

    def collect_segment(self) -> RolloutBuffer:
        cfg = self.cfg
        t_len, w = cfg.ppo.rollout_t, cfg.ppo.workers
        buf = RolloutBuffer.allocate(t_len, w, self.obs_h, self.obs_w)
        chunk_starts = {sl.start for sl in
                        _chunk_slices(t_len, cfg.ppo.minibatches)}
        bounds = (cfg.sim.v_max, cfg.sim.omega_max)
        with torch.no_grad():
            for t in range(t_len):
                if t in chunk_starts:
                    buf.chunk_hidden.append((self.hidden[0].clone(),
                                             self.hidden[1].clone()))
                for i in range(w):
                    if self.pending_reset[i]:
                        buf.starts[t, i] = True
                        self.hidden[0][:, i] = 0.0
                        self.hidden[1][:, i] = 0.0
                        self.pending_reset[i] = False
                for i, obs in enumerate(self.cur_obs):
                    buf.depth[t, i] = obs.depth
                    buf.goal[t, i] = obs.goal_vector
                    buf.prev[t, i] = obs.prev_action
                inputs = self.policy.encode_inputs(
                    torch.from_numpy(buf.depth[t]),
                    torch.from_numpy(buf.goal[t]),
                    torch.from_numpy(buf.prev[t]))
                dist, value, self.hidden = self.policy.step(inputs,
                                                            self.hidden)
                mean = dist.mean.numpy()
                std = np.exp(dist.log_std.numpy())
                for i in range(w):
                    raw = mean[i] + std * self.act_rng[i].standard_normal(2)
                    buf.action_raw[t, i] = raw
                logp = dist.log_prob(torch.from_numpy(buf.action_raw[t]))
                buf.log_prob[t] = logp.numpy()
                buf.value[t] = value.numpy()
                for i in range(w):
                    a = buf.action_raw[t, i]
                    act = Action(float(np.clip(a[0], -bounds[0], bounds[0])),
                                 float(np.clip(a[1], -bounds[1], bounds[1])),
                                 v_max=bounds[0], omega_max=bounds[1])
                    out = env_step(self.states[i], act)
                    buf.reward[t, i] = out.reward
                    buf.done[t, i] = out.done
                    self._ep_return[i] += out.reward
                    if out.done:
                        self._record_episode_end(i)
                        state, obs = self._reset_worker(i)
                        self.states[i] = state
                        self.cur_obs[i] = obs
                        self.pending_reset[i] = True
                    else:
                        self.cur_obs[i] = apply_pipeline(
                            out.obs, cfg.augment, self.aug_rng[i], "train")
                self.env_steps += w
            # bootstrap value for the state after the segment, with hidden
            # zeroed wherever that state opens a fresh episode
            boot_hidden = (self.hidden[0].clone(), self.hidden[1].clone())
            for i in range(w):
                if self.pending_reset[i]:
                    boot_hidden[0][:, i] = 0.0
                    boot_hidden[1][:, i] = 0.0
            depth = np.stack([o.depth for o in self.cur_obs])
            goal = np.array([o.goal_vector for o in self.cur_obs], np.float32)
            prev = np.array([o.prev_action for o in self.cur_obs], np.float32)
            inputs = self.policy.encode_inputs(
                torch.from_numpy(depth), torch.from_numpy(goal),
                torch.from_numpy(prev))
            _, boot_value, _ = self.policy.step(inputs, boot_hidden)
            buf.bootstrap[:] = boot_value.numpy()
        return buf

    # -- main loop

    def train_update(self) -> dict:
        buf = self.collect_segment()
        adv, ret = compute_gae(buf.reward, buf.value, buf.done, buf.bootstrap,
                               self.cfg.ppo.gamma, self.cfg.ppo.lam)
        adv_n = normalize_advantages(adv, self.cfg.ppo.adv_eps)
        stats = ppo_update(self.policy, self.optimizer, buf, adv_n, ret,
                           self.cfg.ppo)
        if stats["aborted"]:
            self.abort_count += 1
        self.update_count += 1
        return stats

    def run(self, total_steps: int | None = None,
            stop_fn=None) -> dict:
        total = total_steps or self.cfg.train.total_steps
        log_path = self.out_dir / "train_log.csv"
        ckpt_dir = self.out_dir / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        new_log = not log_path.exists()
        interval = self.cfg.train.checkpoint_interval
        last_ckpt_bucket = self.env_steps // interval
        t_start = time.monotonic()
        steps_at_start = self.env_steps
        with open(log_path, "a", newline="") as f:
            writer = csv.writer(f)
            if new_log:
                writer.writerow(["step", "update", "mean_return",
                                 "success_ema", "policy_loss", "value_loss",
                                 "entropy", "clip_frac", "approx_kl",
                                 "steps_per_sec", "aborted"])
            while self.env_steps < total:
                stats = self.train_update()
                if self.update_count % self.cfg.train.log_interval == 0:
                    el = max(time.monotonic() - t_start, 1e-9)
                    sps = (self.env_steps - steps_at_start) / el
                    mr = (float(np.mean(self._window_returns))
                          if self._window_returns else math.nan)
                    writer.writerow([
                        self.env_steps, self.update_count, f"{mr:.6g}",
                        f"{self.success_ema:.6g}",
                        f"{stats['policy_loss']:.6g}",
                        f"{stats['value_loss']:.6g}",
                        f"{stats['entropy']:.6g}",
                        f"{stats['clip_frac']:.6g}",
                        f"{stats['approx_kl']:.6g}",
                        f"{sps:.6g}", int(stats["aborted"])])
                    f.flush()
                    self._window_returns.clear()
                if self.env_steps // interval > last_ckpt_bucket:
                    last_ckpt_bucket = self.env_steps // interval
                    self.save(ckpt_dir / f"ckpt_{self.env_steps:010d}.bin")
                if stop_fn is not None and stop_fn(self):
                    break
            self.save(ckpt_dir / f"ckpt_{self.env_steps:010d}.bin")
        return {"env_steps": self.env_steps, "updates": self.update_count,
                "success_ema": self.success_ema,
                "recent_success": self.recent_success_rate(),
                "aborts": self.abort_count}

    def recent_success_rate(self) -> float:
        if not self.recent_successes:
            return 0.0
        return float(np.mean(self.recent_successes))

    # -- checkpointing

    def save(self, path) -> None:
        extra = {
            "optimizer": _optim_to_numpy(self.optimizer.state_dict()),
            "act_rng": [r.bit_generator.state for r in self.act_rng],
            "aug_rng": [r.bit_generator.state for r in self.aug_rng],
            "env": [env_snapshot(s) for s in self.states],
            "obs_depth": np.stack([o.depth for o in self.cur_obs]),
            "obs_goal": [tuple(o.goal_vector) for o in self.cur_obs],
            "obs_prev": [tuple(o.prev_action) for o in self.cur_obs],
            "hidden": (self.hidden[0].numpy(), self.hidden[1].numpy()),
            "pending_reset": list(self.pending_reset),
            "cursor": list(self.cursor),
            "env_steps": self.env_steps,
            "update_count": self.update_count,
            "success_ema": self.success_ema,
            "abort_count": self.abort_count,
            "ep_return": list(self._ep_return),
            "recent_successes": list(self.recent_successes),
        }
        save_checkpoint(path, self.policy, self.arch_hash, self.env_steps,
                        extra)

    def restore(self, path) -> None:
        ck = load_checkpoint(path, expected_hash=self.arch_hash)
        load_flat_params(self.policy, ck["params"])
        x = ck["extra"]
        self.optimizer.load_state_dict(_optim_from_numpy(x["optimizer"]))
        for r, st in zip(self.act_rng, x["act_rng"]):
            r.bit_generator.state = st
        for r, st in zip(self.aug_rng, x["aug_rng"]):
            r.bit_generator.state = st
        self.states = []
        self.cur_obs = []
        for i, snap in enumerate(x["env"]):
            scene = self.scenes[snap["spec"]["scene_id"]]
            state = env_restore(scene, snap, sim=self.cfg.sim,
                                sensor=self.cfg.sensor,
                                reward_cfg=self.cfg.reward,
                                episode_cfg=self.cfg.episode)
            self.states.append(state)
            self.cur_obs.append(Observation(
                depth=x["obs_depth"][i].copy(),
                goal_vector=tuple(x["obs_goal"][i]),
                prev_action=tuple(x["obs_prev"][i])))
        self.hidden = (torch.from_numpy(x["hidden"][0].copy()),
                       torch.from_numpy(x["hidden"][1].copy()))
        self.pending_reset = list(x["pending_reset"])
        self.cursor = list(x["cursor"])
        self.env_steps = x["env_steps"]
        self.update_count = x["update_count"]
        self.success_ema = x["success_ema"]
        self.abort_count = x["abort_count"]
        self._ep_return = list(x["ep_return"])
        self.recent_successes = list(x["recent_successes"])
        self._window_returns = []
