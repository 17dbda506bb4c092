"""Kinematic simulation layer: agent motion with sliding collisions, patrol
pedestrians, quasi-static box pushing, and the 2.5D depth renderer.

All geometry is continuous; only collision queries touch the occupancy grid.
One simulation instance owns its mutable state; Scene data is shared
read-only.
"""

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .config import SensorConfig, SimConfig
from .scene import PathPolyline, Scene


def wrap_angle(a: float) -> float:
    """Normalize to (-pi, pi]."""
    a = math.remainder(a, math.tau)
    if a <= -math.pi:
        a += math.tau
    return a


@dataclass(frozen=True)
class Action:
    linear_velocity: float
    angular_velocity: float
    v_max: float = 0.5
    omega_max: float = math.pi / 2

    def __post_init__(self):
        object.__setattr__(self, "linear_velocity",
                           min(max(float(self.linear_velocity), -self.v_max), self.v_max))
        object.__setattr__(self, "angular_velocity",
                           min(max(float(self.angular_velocity), -self.omega_max), self.omega_max))


@dataclass
class AgentState:
    position: tuple
    heading: float
    radius: float = 0.18
    collided_this_step: bool = False
    moved_backward_this_step: bool = False


@dataclass
class Pedestrian:
    path: PathPolyline
    arc_position: float
    direction: int            # +1 / -1
    speed: float
    radius: float = 0.3

    @property
    def position(self) -> tuple:
        return self.path.point_at(self.arc_position)


@dataclass
class MovableObject:
    position: tuple
    half_extent: float = 0.25
    mass: float = 1.0
    total_displacement: float = 0.0
    push_count: int = 0


def detect_stop(action: Action, fraction: float = 0.1) -> bool:
    """Implicit stop: both commanded velocities under the fraction of their maxima."""
    return (abs(action.linear_velocity) < fraction * action.v_max
            and abs(action.angular_velocity) < fraction * action.omega_max)


def check_pedestrian_collision(agent_pos, peds, radius: float = 0.3) -> bool:
    px, py = float(agent_pos[0]), float(agent_pos[1])
    for p in peds:
        x, y = p.position if isinstance(p, Pedestrian) else (p[0], p[1])
        if math.hypot(x - px, y - py) < radius:
            return True
    return False


# ------------------------------------------------------------------- stepping


def _object_arrays(objects):
    n = len(objects)
    xy = np.empty((n, 2), np.float64)
    half = np.empty(n, np.float64)
    mass = np.empty(n, np.float64)
    for i, o in enumerate(objects):
        xy[i] = o.position
        half[i] = o.half_extent
        mass[i] = o.mass
    return xy, half, mass


_EMPTY2 = np.zeros((0, 2), np.float64)
_EMPTY1 = np.zeros(0, np.float64)
_EMPTY_EVENTS = np.zeros(0, np.int64)


def step_agent(state: AgentState, action: Action, scene: Scene,
               objects=None, dt: float = 0.1) -> AgentState:
    """Unicycle integration (heading first, then translate along the new
    heading) with axis-separated wall sliding and box pushing.  Objects are
    mutated in place (position, displacement accumulators)."""
    objects = objects or []
    heading = wrap_angle(state.heading + action.angular_velocity * dt)
    step_len = action.linear_velocity * dt
    dx = step_len * math.cos(heading)
    dy = step_len * math.sin(heading)
    x, y = state.position
    if objects:
        obj_xy, obj_half, obj_mass = _object_arrays(objects)
        step_disp = np.zeros((len(objects), 2), np.float64)
        events = np.zeros(len(objects), np.int64)
    else:
        obj_xy, obj_half, obj_mass = _EMPTY2, _EMPTY1, _EMPTY1
        step_disp, events = _EMPTY2, _EMPTY_EVENTS
    nx, ny, collided = kernels.agent_move(
        scene.blocked, scene.resolution, float(x), float(y), state.radius,
        dx, dy, obj_xy, obj_half, obj_mass, step_disp, events, bool(objects))
    for i, o in enumerate(objects):
        o.position = (float(obj_xy[i, 0]), float(obj_xy[i, 1]))
        moved = float(math.hypot(step_disp[i, 0], step_disp[i, 1]))
        if moved > 0.0:
            o.total_displacement += moved
        o.push_count += int(events[i])
    return replace(state, position=(float(nx), float(ny)), heading=heading,
                   collided_this_step=bool(collided),
                   moved_backward_this_step=action.linear_velocity < 0)


def push_object(obj: MovableObject, agent_motion, scene: Scene, *,
                agent_pos, agent_radius: float = 0.18) -> MovableObject:
    """Resolve one agent-box contact after a tentative agent motion.

    The box translates along the motion axis by penetration/(1+mass), clipped
    at walls; the agent is assumed rolled back to contact by the caller.
    Returns the updated object (mutated in place as well).
    """
    ax, ay = float(agent_pos[0]), float(agent_pos[1])
    mx, my = float(agent_motion[0]), float(agent_motion[1])
    xy = np.array([obj.position], np.float64)
    half = np.array([obj.half_extent], np.float64)
    mass = np.array([obj.mass], np.float64)
    disp = np.zeros((1, 2), np.float64)
    events = np.zeros(1, np.int64)
    kernels.agent_move(scene.blocked, scene.resolution, ax, ay, agent_radius,
                       mx, my, xy, half, mass, disp, events, True)
    obj.position = (float(xy[0, 0]), float(xy[0, 1]))
    moved = float(math.hypot(disp[0, 0], disp[0, 1]))
    if moved > 0.0:
        obj.total_displacement += moved
    obj.push_count += int(events[0])
    return obj


def step_pedestrians(peds, dt: float = 0.1):
    """Advance every pedestrian along its patrol with exact endpoint
    reflection.  Returns the same list, mutated."""
    if not peds:
        return peds
    arrs = _ped_arrays(peds)
    out_xy = np.empty((len(peds), 2), np.float64)
    kernels.step_peds(arrs["arc"], arrs["direction"], arrs["speed"],
                      arrs["length"], dt, arrs["pts"], arrs["cum"],
                      arrs["offset"], arrs["count"], out_xy)
    for i, p in enumerate(peds):
        p.arc_position = float(arrs["arc"][i])
        p.direction = int(arrs["direction"][i])
    return peds


def _ped_arrays(peds) -> dict:
    pts_list = [np.asarray(p.path.points, np.float64).reshape(-1, 2) for p in peds]
    counts = np.array([len(p) for p in pts_list], np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    pts = np.concatenate(pts_list) if pts_list else _EMPTY2
    cum = np.concatenate([p.path.cumlen for p in peds]) if peds else _EMPTY1
    return {
        "pts": np.ascontiguousarray(pts),
        "cum": np.ascontiguousarray(cum.astype(np.float64)),
        "offset": offsets,
        "count": counts,
        "arc": np.array([p.arc_position for p in peds], np.float64),
        "direction": np.array([float(p.direction) for p in peds], np.float64),
        "speed": np.array([p.speed for p in peds], np.float64),
        "length": np.array([p.path.length for p in peds], np.float64),
        "radius": np.array([p.radius for p in peds], np.float64),
    }


# ------------------------------------------------------------------ rendering


def ped_positions(peds) -> np.ndarray:
    out = np.empty((len(peds), 2), np.float64)
    for i, p in enumerate(peds):
        out[i] = p.position
    return out


def render_depth(scene: Scene, objects, peds, pose, cfg: SensorConfig,
                 out: np.ndarray | None = None) -> np.ndarray:
    """Egocentric (H, W) float32 depth in [0, 1]; see kernels.render_depth."""
    x, y, heading = float(pose[0]), float(pose[1]), float(pose[2])
    if not scene.in_bounds(x, y):
        raise ValueError(f"pose {pose} outside grid")
    if out is None:
        out = np.empty((cfg.height, cfg.width), np.float32)
    if peds is None:
        ped_xy, ped_rad = _EMPTY2, _EMPTY1
    elif isinstance(peds, tuple):
        ped_xy, ped_rad = peds
    else:
        ped_xy = ped_positions(peds)
        ped_rad = np.array([p.radius for p in peds], np.float64)
    if objects is None:
        obj_xy, obj_half = _EMPTY2, _EMPTY1
    elif isinstance(objects, tuple):
        obj_xy, obj_half = objects
    else:
        obj_xy, obj_half, _ = _object_arrays(objects)
    key = kernels.pose_noise_key(cfg.noise_seed, x, y, heading)
    kernels.render_depth(scene.blocked, scene.resolution, x, y, heading,
                         ped_xy, ped_rad, cfg.ped_height,
                         obj_xy, obj_half, cfg.object_height,
                         cfg.hfov, cfg.vfov, cfg.max_range, cfg.camera_height,
                         out, cfg.flavor == "scan", cfg.noise_sigma,
                         cfg.dropout_prob, key)
    return out


# ------------------------------------------------------------------ debug io


def depth_to_pgm(img: np.ndarray) -> bytes:
    """16-bit big-endian binary PGM of a [0,1] depth image."""
    h, w = img.shape
    vals = np.clip(np.round(img.astype(np.float64) * 65535), 0, 65535)
    body = vals.astype(">u2").tobytes()
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + body


def pgm_to_depth(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or parts[2] != b"65535":
        raise ValueError("not a 16-bit PGM")
    w, h = (int(v) for v in parts[1].split())
    img = np.frombuffer(parts[3], dtype=">u2", count=h * w).reshape(h, w)
    return img.astype(np.float32) / 65535.0


TRAJECTORY_FIELDS = ("step", "x", "y", "heading", "v", "omega", "reward", "flags")


def write_trajectory_csv(path, rows):
    """rows: iterables matching TRAJECTORY_FIELDS; flags is a compact string
    of B(ackward) C(ollision) S(uccess) P(ed-collision) T(imeout) letters."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRAJECTORY_FIELDS)
        for row in rows:
            writer.writerow(row)


def flags_string(i_back=False, i_col=False, i_suc=False,
                 ped_collision=False, timeout=False) -> str:
    out = ""
    if i_back:
        out += "B"
    if i_col:
        out += "C"
    if i_suc:
        out += "S"
    if ped_collision:
        out += "P"
    if timeout:
        out += "T"
    return out
