"""Episode construction and the environment step contract for the three
navigation tasks (point-goal, social, interactive).

An episode is fully determined by its EpisodeSpec: pedestrians, objects, and
sensor noise all derive from spec.rng_seed, so resets replay exactly.
"""

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import kernels
from .config import EpisodeConfig, RewardConfig, SensorConfig, SimConfig
from .rng import substream
from .scene import (DistanceField, SamplingError, Scene, compute_distance_field,
                    sample_navigable_point, shortest_path)
from .simcore import (Action, MovableObject, Pedestrian, detect_stop,
                      render_depth, wrap_angle)

POINTNAV = "pointnav"
SOCIALNAV = "socialnav"
INTERACTIVENAV = "interactivenav"
TASK_KINDS = (POINTNAV, SOCIALNAV, INTERACTIVENAV)

# arc-length spacing of movable boxes along the episode's shortest path, and
# the exclusion margin around both endpoints
OBJECT_MARK_SPACING = 0.5
OBJECT_END_MARGIN = 0.5
_MARK_EPS = 1e-9


@dataclass
class EpisodeSpec:
    scene_id: str
    start: tuple               # (x, y)
    start_heading: float
    goal: tuple                # (x, y)
    task: str
    train_ped_count: int
    shortest_path_length: float
    rng_seed: int
    movable_objects: tuple = ()   # ((x, y), ...) InteractiveNav only

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "start": list(self.start),
            "start_heading": self.start_heading,
            "goal": list(self.goal),
            "task": self.task,
            "ped_count": self.train_ped_count,
            "shortest_path_length": self.shortest_path_length,
            "seed": self.rng_seed,
            "objects": [list(p) for p in self.movable_objects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeSpec":
        return cls(
            scene_id=d["scene_id"],
            start=tuple(float(v) for v in d["start"]),
            start_heading=float(d["start_heading"]),
            goal=tuple(float(v) for v in d["goal"]),
            task=d["task"],
            train_ped_count=int(d["ped_count"]),
            shortest_path_length=float(d["shortest_path_length"]),
            rng_seed=int(d["seed"]),
            movable_objects=tuple(tuple(float(v) for v in p)
                                  for p in d.get("objects", [])),
        )


@dataclass(frozen=True)
class StepFlags:
    i_back: bool = False
    i_col: bool = False
    i_suc: bool = False
    ped_collision: bool = False
    timeout: bool = False


@dataclass
class Observation:
    depth: np.ndarray           # (H, W) float32 in [0, 1]
    goal_vector: tuple          # (distance m, heading error rad)
    prev_action: tuple          # (v, omega), commanded, post-clamp


@dataclass
class StepOutcome:
    obs: Observation
    reward: float
    done: bool
    flags: StepFlags


def compute_reward(d_prev: float, d_new: float, flags: StepFlags,
                   cfg: RewardConfig) -> float:
    if not (math.isfinite(d_prev) and math.isfinite(d_new)):
        raise ValueError("non-finite geodesic distance in reward")
    return (-(d_new - d_prev) - cfg.w1
            - cfg.w2 * (float(flags.i_back) + float(flags.i_col))
            + cfg.w3 * float(flags.i_suc))


def goal_vector(dr_pose, goal) -> tuple:
    """Goal expressed in the dead-reckoned frame: (distance, heading error)."""
    dx = goal[0] - dr_pose[0]
    dy = goal[1] - dr_pose[1]
    dist = math.hypot(dx, dy)
    err = wrap_angle(math.atan2(dy, dx) - dr_pose[2])
    return (dist, err)


# --------------------------------------------------------------- construction


def object_marks(path_length: float,
                 spacing: float = OBJECT_MARK_SPACING,
                 end_margin: float = OBJECT_END_MARGIN):
    """Arc positions k*spacing (k >= 1) kept only when at least end_margin
    from both path endpoints (small epsilon so exact boundaries are kept)."""
    marks = []
    k = 1
    while True:
        m = k * spacing
        if m > path_length - end_margin + _MARK_EPS:
            break
        if m >= end_margin - _MARK_EPS:
            marks.append(m)
        k += 1
    return marks


def make_episode(scene: Scene, rng: np.random.Generator, task: str,
                 ped_count: int, sim: SimConfig | None = None,
                 cfg: EpisodeConfig | None = None) -> EpisodeSpec:
    """Sample start/goal with agent clearance and geodesic separation in
    [min_distance, max_distance]; for the interactive task, drop movable
    boxes on the 0.5 m marks of the shortest path (skipping marks near the
    endpoints and marks whose box would intersect a wall)."""
    if task not in TASK_KINDS:
        raise ValueError(f"unknown task {task!r}")
    if ped_count < 0:
        raise ValueError("ped_count must be >= 0")
    sim = sim or SimConfig()
    cfg = cfg or EpisodeConfig()
    for _ in range(cfg.max_retries):
        start = sample_navigable_point(scene, rng, clearance=sim.agent_radius)
        goal = sample_navigable_point(scene, rng, clearance=sim.agent_radius)
        field = compute_distance_field(scene, goal)
        d = field.distance(start)
        if not (cfg.dist_min <= d <= cfg.dist_max):
            continue
        try:
            path = shortest_path(scene, start, goal, clearance=sim.agent_radius)
        except SamplingError:
            continue
        heading = float(rng.uniform(-math.pi, math.pi))
        seed = int(rng.integers(0, 1 << 63))
        objects = ()
        if task == INTERACTIVENAV:
            placed = []
            for m in object_marks(path.length, cfg.object_spacing,
                                  cfg.object_margin):
                px, py = path.point_at(m)
                if kernels.box_hits_blocked(scene.blocked, scene.resolution,
                                            px, py, sim.object_half_extent,
                                            sim.object_half_extent):
                    continue
                placed.append((float(px), float(py)))
            objects = tuple(placed)
        return EpisodeSpec(
            scene_id=scene.id, start=start, start_heading=heading, goal=goal,
            task=task, train_ped_count=int(ped_count),
            shortest_path_length=float(path.length), rng_seed=seed,
            movable_objects=objects)
    raise SamplingError(
        f"no episode with geodesic distance in [{cfg.dist_min}, "
        f"{cfg.dist_max}] after {cfg.max_retries} tries on {scene.id}")


# ---------------------------------------------------------------- env state


_EMPTY2 = np.zeros((0, 2), np.float64)
_EMPTY1 = np.zeros(0, np.float64)


@dataclass
class EnvState:
    scene: Scene
    spec: EpisodeSpec
    dist_field: DistanceField
    sim: SimConfig
    sensor: SensorConfig
    reward_cfg: RewardConfig
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    dr_x: float = 0.0
    dr_y: float = 0.0
    dr_heading: float = 0.0
    step_count: int = 0
    done: bool = False
    outcome: str | None = None
    d_prev: float = 0.0
    prev_v: float = 0.0
    prev_w: float = 0.0
    agent_path_length: float = 0.0
    max_steps: int = 500
    success_radius: float = 0.2
    peds: list = dc_field(default_factory=list)
    objects: list = dc_field(default_factory=list)
    # flat pedestrian track arrays (see kernels.step_peds)
    ped_pts: np.ndarray = dc_field(default_factory=lambda: _EMPTY2)
    ped_cum: np.ndarray = dc_field(default_factory=lambda: _EMPTY1)
    ped_offset: np.ndarray = dc_field(default_factory=lambda: np.zeros(0, np.int64))
    ped_count_arr: np.ndarray = dc_field(default_factory=lambda: np.zeros(0, np.int64))
    ped_arc: np.ndarray = dc_field(default_factory=lambda: _EMPTY1)
    ped_dir: np.ndarray = dc_field(default_factory=lambda: _EMPTY1)
    ped_speed: np.ndarray = dc_field(default_factory=lambda: _EMPTY1)
    ped_len: np.ndarray = dc_field(default_factory=lambda: _EMPTY1)
    ped_rad: np.ndarray = dc_field(default_factory=lambda: _EMPTY1)
    ped_xy: np.ndarray = dc_field(default_factory=lambda: _EMPTY2)
    obj_xy: np.ndarray = dc_field(default_factory=lambda: _EMPTY2)
    obj_half: np.ndarray = dc_field(default_factory=lambda: _EMPTY1)
    obj_mass: np.ndarray = dc_field(default_factory=lambda: _EMPTY1)
    obj_disp: np.ndarray = dc_field(default_factory=lambda: _EMPTY1)
    obj_pushes: np.ndarray = dc_field(default_factory=lambda: np.zeros(0, np.int64))
    _step_disp: np.ndarray = dc_field(default_factory=lambda: _EMPTY2)
    _step_events: np.ndarray = dc_field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def pose(self) -> tuple:
        return (self.x, self.y, self.heading)

    def goal_distance_euclidean(self) -> float:
        return math.hypot(self.spec.goal[0] - self.x, self.spec.goal[1] - self.y)

    def disturbance(self) -> float:
        """Sum of mass * accumulated displacement over movable objects (kg*m)."""
        return float(np.sum(self.obj_mass * self.obj_disp))


_FIELD_CACHE_CAP = 128
_TRACK_CACHE_CAP = 256


def _scene_cache(scene: Scene, name: str, cap: int) -> dict:
    caches = scene.__dict__.setdefault("_runtime_cache", {})
    return caches.setdefault(name, {"cap": cap, "map": {}})


def _cache_get(cache: dict, key):
    return cache["map"].get(key)


def _cache_put(cache: dict, key, value):
    m = cache["map"]
    if len(m) >= cache["cap"]:
        m.pop(next(iter(m)))
    m[key] = value


def _goal_field(scene: Scene, goal) -> DistanceField:
    """Distance fields are pure functions of (scene, goal); memoized on the
    scene so episode replays skip the Dijkstra."""
    key = (float(goal[0]), float(goal[1]))
    cache = _scene_cache(scene, "fields", _FIELD_CACHE_CAP)
    hit = _cache_get(cache, key)
    if hit is None:
        hit = compute_distance_field(scene, goal)
        _cache_put(cache, key, hit)
    return hit


def _episode_tracks(scene: Scene, spec: EpisodeSpec, sim: SimConfig) -> list:
    """Pedestrian tracks derive deterministically from spec.rng_seed, so the
    immutable parts (paths, speeds, initial phase) are memoized; fresh
    Pedestrian objects are built per reset since stepping mutates them."""
    key = (spec.rng_seed, spec.train_ped_count, sim.ped_radius, sim.v_max)
    cache = _scene_cache(scene, "tracks", _TRACK_CACHE_CAP)
    hit = _cache_get(cache, key)
    if hit is None:
        from .augment import populate_pedestrians
        peds = populate_pedestrians(scene, spec.train_ped_count,
                                    substream(spec.rng_seed, "peds"), sim=sim)
        hit = tuple((p.path, p.arc_position, p.direction, p.speed, p.radius)
                    for p in peds)
        _cache_put(cache, key, hit)
    return [Pedestrian(path=path, arc_position=arc, direction=direction,
                       speed=speed, radius=radius)
            for path, arc, direction, speed, radius in hit]


def _attach_pedestrians(state: EnvState, peds) -> None:
    state.peds = list(peds)
    n = len(state.peds)
    if n == 0:
        return
    pts_list = [np.asarray(p.path.points, np.float64).reshape(-1, 2)
                for p in state.peds]
    counts = np.array([len(a) for a in pts_list], np.int64)
    state.ped_pts = np.ascontiguousarray(np.concatenate(pts_list))
    state.ped_cum = np.ascontiguousarray(
        np.concatenate([p.path.cumlen for p in state.peds]).astype(np.float64))
    state.ped_offset = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    state.ped_count_arr = counts
    state.ped_arc = np.array([p.arc_position for p in state.peds], np.float64)
    state.ped_dir = np.array([float(p.direction) for p in state.peds], np.float64)
    state.ped_speed = np.array([p.speed for p in state.peds], np.float64)
    state.ped_len = np.array([p.path.length for p in state.peds], np.float64)
    state.ped_rad = np.array([p.radius for p in state.peds], np.float64)
    state.ped_xy = np.empty((n, 2), np.float64)
    for i, p in enumerate(state.peds):
        state.ped_xy[i] = p.position


def _attach_objects(state: EnvState) -> None:
    objs = [MovableObject(position=p, half_extent=state.sim.object_half_extent,
                          mass=state.sim.object_mass)
            for p in state.spec.movable_objects]
    state.objects = objs
    n = len(objs)
    state.obj_xy = np.array([o.position for o in objs], np.float64).reshape(n, 2)
    state.obj_half = np.array([o.half_extent for o in objs], np.float64)
    state.obj_mass = np.array([o.mass for o in objs], np.float64)
    state.obj_disp = np.zeros(n, np.float64)
    state.obj_pushes = np.zeros(n, np.int64)
    state._step_disp = np.zeros((n, 2), np.float64)
    state._step_events = np.zeros(n, np.int64)


def observe(state: EnvState) -> Observation:
    depth = render_depth(state.scene, (state.obj_xy, state.obj_half),
                         (state.ped_xy, state.ped_rad), state.pose,
                         state.sensor)
    gv = goal_vector((state.dr_x, state.dr_y, state.dr_heading), state.spec.goal)
    return Observation(depth=depth, goal_vector=gv,
                       prev_action=(state.prev_v, state.prev_w))


def reset(scene: Scene, spec: EpisodeSpec, sim: SimConfig | None = None,
          sensor: SensorConfig | None = None,
          reward_cfg: RewardConfig | None = None,
          episode_cfg: EpisodeConfig | None = None):
    """Instantiate the world for one episode. Returns (EnvState, Observation).
    Deterministic: pedestrians, objects and noise all derive from the spec."""
    if spec.scene_id != scene.id:
        raise ValueError(f"spec is for {spec.scene_id!r}, scene is {scene.id!r}")
    sim = sim or SimConfig()
    sensor = sensor or SensorConfig()
    reward_cfg = reward_cfg or RewardConfig()
    episode_cfg = episode_cfg or EpisodeConfig()
    dist_field = _goal_field(scene, spec.goal)
    d0 = dist_field.distance(spec.start)
    if not math.isfinite(d0):
        raise ValueError("start is not connected to goal")
    state = EnvState(scene=scene, spec=spec, dist_field=dist_field, sim=sim,
                     sensor=sensor, reward_cfg=reward_cfg,
                     x=float(spec.start[0]), y=float(spec.start[1]),
                     heading=float(spec.start_heading),
                     dr_x=float(spec.start[0]), dr_y=float(spec.start[1]),
                     dr_heading=float(spec.start_heading),
                     d_prev=float(d0), max_steps=episode_cfg.max_steps,
                     success_radius=episode_cfg.success_radius)
    if spec.train_ped_count > 0:
        _attach_pedestrians(state, _episode_tracks(scene, spec, sim))
    _attach_objects(state)
    return state, observe(state)


def env_step(state: EnvState, action: Action) -> StepOutcome:
    """One control step. Ordering: stop check first (a stop never incurs
    motion penalties), then pedestrians, then agent motion with pushes, then
    termination checks, then reward from geodesic distances at true poses."""
    if state.done:
        raise RuntimeError("env_step on a finished episode")
    sim = state.sim
    v = min(max(float(action.linear_velocity), -sim.v_max), sim.v_max)
    w = min(max(float(action.angular_velocity), -sim.omega_max), sim.omega_max)
    state.step_count += 1
    i_back = i_col = i_suc = ped_col = timeout = False
    d_new = state.d_prev

    if (abs(v) < sim.stop_fraction * sim.v_max
            and abs(w) < sim.stop_fraction * sim.omega_max):
        state.done = True
        i_suc = state.goal_distance_euclidean() < state.success_radius
        state.outcome = "success" if i_suc else "stop_failure"
    else:
        if len(state.peds) > 0:
            kernels.step_peds(state.ped_arc, state.ped_dir, state.ped_speed,
                              state.ped_len, sim.dt, state.ped_pts,
                              state.ped_cum, state.ped_offset,
                              state.ped_count_arr, state.ped_xy)
        heading = wrap_angle(state.heading + w * sim.dt)
        dx = v * sim.dt * math.cos(heading)
        dy = v * sim.dt * math.sin(heading)
        if len(state.objects) > 0:
            state._step_disp[:] = 0.0
            state._step_events[:] = 0
        nx, ny, collided = kernels.agent_move(
            state.scene.blocked, state.scene.resolution, state.x, state.y,
            sim.agent_radius, dx, dy, state.obj_xy, state.obj_half,
            state.obj_mass, state._step_disp, state._step_events,
            len(state.objects) > 0)
        for i in range(len(state.objects)):
            moved = math.hypot(state._step_disp[i, 0], state._step_disp[i, 1])
            if moved > 0.0:
                state.obj_disp[i] += moved
            state.obj_pushes[i] += int(state._step_events[i])
        state.agent_path_length += math.hypot(nx - state.x, ny - state.y)
        state.x, state.y, state.heading = float(nx), float(ny), heading
        i_back = v < 0.0
        i_col = bool(collided)
        # dead reckoning integrates the commanded motion, collision-free
        state.dr_heading = wrap_angle(state.dr_heading + w * sim.dt)
        state.dr_x += v * sim.dt * math.cos(state.dr_heading)
        state.dr_y += v * sim.dt * math.sin(state.dr_heading)
        if len(state.peds) > 0:
            dxy = state.ped_xy - np.array((state.x, state.y))
            if float(np.min(np.hypot(dxy[:, 0], dxy[:, 1]))) < sim.ped_collision_radius:
                ped_col = True
                state.done = True
                state.outcome = "ped_collision"
        if not state.done and state.step_count >= state.max_steps:
            timeout = True
            state.done = True
            state.outcome = "timeout"
        d_new = state.dist_field.distance((state.x, state.y))

    flags = StepFlags(i_back=i_back, i_col=i_col, i_suc=i_suc,
                      ped_collision=ped_col, timeout=timeout)
    reward = compute_reward(state.d_prev, d_new, flags, state.reward_cfg)
    state.d_prev = d_new
    state.prev_v, state.prev_w = v, w
    return StepOutcome(obs=observe(state), reward=reward, done=state.done,
                       flags=flags)


# ------------------------------------------------------------- checkpointing


def env_snapshot(state: EnvState) -> dict:
    """Picklable dynamic state; the scene is referenced by id and the
    pedestrian tracks are rebuilt from the spec seed on restore."""
    return {
        "spec": state.spec.to_dict(),
        "pose": (state.x, state.y, state.heading),
        "dr_pose": (state.dr_x, state.dr_y, state.dr_heading),
        "step_count": state.step_count,
        "done": state.done,
        "outcome": state.outcome,
        "d_prev": state.d_prev,
        "prev_action": (state.prev_v, state.prev_w),
        "agent_path_length": state.agent_path_length,
        "ped_arc": state.ped_arc.tolist(),
        "ped_dir": state.ped_dir.tolist(),
        "obj_xy": state.obj_xy.tolist(),
        "obj_disp": state.obj_disp.tolist(),
        "obj_pushes": state.obj_pushes.tolist(),
    }


def env_restore(scene: Scene, snap: dict, sim: SimConfig | None = None,
                sensor: SensorConfig | None = None,
                reward_cfg: RewardConfig | None = None,
                episode_cfg: EpisodeConfig | None = None) -> EnvState:
    spec = EpisodeSpec.from_dict(snap["spec"])
    state, _ = reset(scene, spec, sim=sim, sensor=sensor,
                     reward_cfg=reward_cfg, episode_cfg=episode_cfg)
    state.x, state.y, state.heading = snap["pose"]
    state.dr_x, state.dr_y, state.dr_heading = snap["dr_pose"]
    state.step_count = snap["step_count"]
    state.done = snap["done"]
    state.outcome = snap["outcome"]
    state.d_prev = snap["d_prev"]
    state.prev_v, state.prev_w = snap["prev_action"]
    state.agent_path_length = snap["agent_path_length"]
    if len(state.peds) > 0:
        state.ped_arc[:] = snap["ped_arc"]
        state.ped_dir[:] = snap["ped_dir"]
        for i in range(len(state.peds)):
            px, py = kernels.eval_polyline(state.ped_pts, state.ped_cum,
                                           state.ped_offset,
                                           state.ped_count_arr, i,
                                           float(state.ped_arc[i]))
            state.ped_xy[i, 0] = px
            state.ped_xy[i, 1] = py
            state.peds[i].arc_position = float(state.ped_arc[i])
            state.peds[i].direction = int(state.ped_dir[i])
    if len(state.objects) > 0:
        state.obj_xy[:] = snap["obj_xy"]
        state.obj_disp[:] = snap["obj_disp"]
        state.obj_pushes[:] = snap["obj_pushes"]
        for i, o in enumerate(state.objects):
            o.position = (float(state.obj_xy[i, 0]), float(state.obj_xy[i, 1]))
            o.total_displacement = float(state.obj_disp[i])
            o.push_count = int(state.obj_pushes[i])
    return state


# ------------------------------------------------------------------ datasets


def write_episode_dataset(path, specs) -> None:
    with open(path, "w") as f:
        for spec in specs:
            f.write(json.dumps(spec.to_dict(), sort_keys=True))
            f.write("\n")


def read_episode_dataset(path) -> list:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(EpisodeSpec.from_dict(json.loads(line)))
    return out
