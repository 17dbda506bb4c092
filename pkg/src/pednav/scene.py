"""Procedural apartment scenes, geodesic distance fields, and shortest paths.

Scenes are occupancy grids (free / wall / static furniture) with a closed
wall border and a single connected free region.  Geodesics are exact
8-connected Dijkstra distances (diagonal cost sqrt(2)*resolution); paths are
grid-optimal cell chains post-processed by string pulling.
"""

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage

from . import kernels
from .config import SceneGenConfig
from .rng import substream

FREE, WALL, FURNITURE = 0, 1, 2
_CHAR_FOR = {FREE: ".", WALL: "#", FURNITURE: "F"}
_LABEL_FOR = {".": FREE, "#": WALL, "F": FURNITURE}
SCENE_FORMAT_VERSION = 1

# Erosion pad converting "center clearance >= c" into a physical guarantee
# of c for any point inside the cell (see safe_mask); in units of resolution.
CLEARANCE_PAD_CELLS = 0.75


class SceneGenerationError(RuntimeError):
    pass


class SamplingError(RuntimeError):
    pass


@dataclass
class Scene:
    id: str
    cells: np.ndarray            # uint8 (H, W) of FREE/WALL/FURNITURE
    resolution: float
    rng_seed: int
    meta: dict | None = None
    blocked: np.ndarray = dc_field(init=False, repr=False)
    clearance_field: np.ndarray = dc_field(init=False, repr=False)

    def __post_init__(self):
        cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
        self.cells = cells
        self.blocked = np.ascontiguousarray((cells != FREE).astype(np.uint8))
        # Distance from free-cell centers to the nearest non-free cell, minus
        # half a cell diagonal: a disc of radius <= clearance_field centered
        # anywhere reasonable in the cell cannot overlap a wall cell square.
        edt = ndimage.distance_transform_edt(cells == FREE,
                                             sampling=self.resolution)
        pad = self.resolution * math.sqrt(2.0) / 2.0
        self.clearance_field = np.ascontiguousarray(
            np.maximum(0.0, edt - pad) * (cells == FREE))

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    def in_bounds(self, x: float, y: float) -> bool:
        return (0.0 <= x < self.width * self.resolution
                and 0.0 <= y < self.height * self.resolution)

    def cell_of(self, x: float, y: float) -> tuple:
        return int(y / self.resolution), int(x / self.resolution)

    def clearance_pad(self) -> float:
        return CLEARANCE_PAD_CELLS * self.resolution

    def safe_mask(self, clearance: float) -> np.ndarray:
        """uint8 mask of cells NOT usable at the given center clearance."""
        unsafe = (self.clearance_field < clearance) | (self.cells != FREE)
        return np.ascontiguousarray(unsafe.astype(np.uint8))


@dataclass
class DistanceField:
    goal: tuple
    values: np.ndarray           # float64 (H, W); +inf = unreachable
    resolution: float

    def distance(self, p) -> float:
        x, y = float(p[0]), float(p[1])
        H, W = self.values.shape
        if not (0.0 <= x < W * self.resolution and 0.0 <= y < H * self.resolution):
            raise ValueError(f"point {p} outside grid bounds")
        return float(kernels.interp_field(self.values, self.resolution, x, y))


def geodesic_distance(field: DistanceField, p) -> float:
    return field.distance(p)


@dataclass
class PathPolyline:
    points: np.ndarray           # float64 (n, 2)
    length: float
    cumlen: np.ndarray = dc_field(init=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        self.points = pts
        if len(pts) < 2:
            self.cumlen = np.zeros(max(1, len(pts)), dtype=np.float64)
        else:
            seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            self.cumlen = np.concatenate([[0.0], np.cumsum(seg)])

    def point_at(self, arc: float) -> tuple:
        pts = self.points
        if len(pts) < 2:
            return float(pts[0, 0]), float(pts[0, 1])
        arc = min(max(arc, 0.0), float(self.cumlen[-1]))
        i = int(np.searchsorted(self.cumlen, arc, side="right")) - 1
        i = min(max(i, 0), len(pts) - 2)
        seg = self.cumlen[i + 1] - self.cumlen[i]
        t = 0.0 if seg <= 0 else (arc - self.cumlen[i]) / seg
        return (float(pts[i, 0] + t * (pts[i + 1, 0] - pts[i, 0])),
                float(pts[i, 1] + t * (pts[i + 1, 1] - pts[i, 1])))


# ------------------------------------------------------------------ geodesics


def compute_distance_field(scene: Scene, goal) -> DistanceField:
    x, y = float(goal[0]), float(goal[1])
    if not scene.in_bounds(x, y):
        raise ValueError(f"goal {goal} outside grid bounds")
    r, c = scene.cell_of(x, y)
    if scene.cells[r, c] != FREE:
        raise ValueError(f"goal {goal} lies in a non-free cell")
    values = kernels.dijkstra_field(scene.blocked, r, c, scene.resolution)
    return DistanceField(goal=(x, y), values=values, resolution=scene.resolution)


def _descend_path(values: np.ndarray, res: float, start_cell, goal_cell) -> list:
    """Walk from start_cell down the distance field to goal_cell (exact
    relaxation equalities, so some predecessor always matches bitwise)."""
    H, W = values.shape
    diag = res * math.sqrt(2.0)
    path = [start_cell]
    r, c = start_cell
    guard = H * W + 8
    while (r, c) != goal_cell and guard > 0:
        guard -= 1
        here = values[r, c]
        best = None
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                rr, cc = r + dr, c + dc
                if not (0 <= rr < H and 0 <= cc < W):
                    continue
                v = values[rr, cc]
                if not np.isfinite(v):
                    continue
                step = diag if dr and dc else res
                if v + step == here and (best is None or v < best[0]):
                    best = (v, rr, cc)
        if best is None:
            # float-safe fallback: steepest descent
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if dr == 0 and dc == 0:
                        continue
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < H and 0 <= cc < W and np.isfinite(values[rr, cc]):
                        if values[rr, cc] < here and (best is None or values[rr, cc] < best[0]):
                            best = (values[rr, cc], rr, cc)
            if best is None:
                raise SamplingError("distance field descent stuck")
        r, c = best[1], best[2]
        path.append((r, c))
    if (r, c) != goal_cell:
        raise SamplingError("distance field descent did not reach the goal")
    return path


def _line_clear(unsafe: np.ndarray, res: float, p, q) -> bool:
    dx, dy = q[0] - p[0], q[1] - p[1]
    dist = math.hypot(dx, dy)
    if dist <= 1e-12:
        return True
    t = kernels._raycast_grid(unsafe, res, p[0], p[1], dx / dist, dy / dist, dist)
    return t >= dist


def shortest_path(scene: Scene, a, b, clearance: float = 0.0) -> PathPolyline:
    """Grid-optimal path from a to b, string-pulled, restricted to cells with
    clearance_field >= clearance.  Built on a canonical endpoint ordering so
    the length is symmetric in (a, b)."""
    pa = (float(a[0]), float(a[1]))
    pb = (float(b[0]), float(b[1]))
    for p in (pa, pb):
        if not scene.in_bounds(*p):
            raise ValueError(f"endpoint {p} outside grid bounds")
    swapped = pb < pa
    if swapped:
        pa, pb = pb, pa
    if pa == pb:
        return PathPolyline(points=np.array([pa]), length=0.0)
    unsafe = scene.safe_mask(clearance)
    ca = scene.cell_of(*pa)
    cb = scene.cell_of(*pb)
    for p, cell in ((pa, ca), (pb, cb)):
        if unsafe[cell]:
            raise ValueError(f"endpoint {p} not navigable at clearance {clearance}")
    if ca == cb:
        pts = [pa, pb]
    else:
        values = kernels.dijkstra_field(unsafe, cb[0], cb[1], scene.resolution)
        if not np.isfinite(values[ca]):
            raise SamplingError("endpoints are disconnected at this clearance")
        cells = _descend_path(values, scene.resolution, ca, cb)
        centers = [((c + 0.5) * scene.resolution, (r + 0.5) * scene.resolution)
                   for r, c in cells]
        pts = [pa] + centers + [pb]
    # string pulling: greedily connect each waypoint to the furthest visible one
    pulled = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = len(pts) - 1
        while j > i + 1 and not _line_clear(unsafe, scene.resolution, pts[i], pts[j]):
            j -= 1
        pulled.append(pts[j])
        i = j
    arr = np.array(pulled, dtype=np.float64)
    keep = np.ones(len(arr), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(arr, axis=0), axis=1) > 1e-12
    arr = arr[keep]
    if len(arr) < 2:
        arr = np.array([pa, pb], dtype=np.float64)
    length = float(np.linalg.norm(np.diff(arr, axis=0), axis=1).sum())
    if swapped:
        arr = arr[::-1].copy()
    return PathPolyline(points=arr, length=length)


# ------------------------------------------------------------------- sampling


def sample_navigable_point(scene: Scene, rng, clearance: float = 0.0):
    """Uniform over cells with clearance_field >= clearance, then uniform
    within the chosen cell."""
    if clearance < 0:
        raise ValueError("clearance must be >= 0")
    ok = (scene.clearance_field >= clearance) & (scene.cells == FREE)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        raise SamplingError(f"no navigable cell at clearance {clearance}")
    cell = int(idx[int(rng.integers(idx.size))])
    r, c = divmod(cell, scene.width)
    u, v = rng.random(), rng.random()
    return ((c + u) * scene.resolution, (r + v) * scene.resolution)


def sample_pedestrian_endpoints(scene: Scene, rng, clearance: float = 0.3,
                                min_separation: float = 3.0,
                                max_retries: int = 1000):
    """Two navigable points with free-space geodesic separation >= 3 m and a
    clearance-respecting path between them."""
    need = clearance + scene.clearance_pad()
    field = None
    reach = None
    p1 = None
    for attempt in range(max_retries):
        if attempt % 50 == 0 or p1 is None:
            p1 = sample_navigable_point(scene, rng, need)
            field = compute_distance_field(scene, p1)
            r, c = scene.cell_of(*p1)
            reach = kernels.dijkstra_field(scene.safe_mask(need), r, c,
                                           scene.resolution)
        p2 = sample_navigable_point(scene, rng, need)
        if field.distance(p2) < min_separation:
            continue
        if not np.isfinite(reach[scene.cell_of(*p2)]):
            continue
        return p1, p2
    raise SamplingError(
        f"no pedestrian endpoints >= {min_separation} m apart after "
        f"{max_retries} tries (free diameter too small?)")


# ----------------------------------------------------------------- generation


def _carve_rooms(cells, rng, cfg: SceneGenConfig):
    H, W = cells.shape
    min_cells = max(2, int(math.ceil(cfg.min_room_extent / cfg.resolution)))
    door_cells = max(1, int(math.ceil(cfg.doorway_width / cfg.resolution)))
    n_rooms = int(rng.integers(cfg.rooms_min, cfg.rooms_max + 1))
    regions = [(1, H - 1, 1, W - 1)]  # half-open interior spans
    doors = []
    for _ in range(n_rooms - 1):
        splittable = [i for i, (r0, r1, c0, c1) in enumerate(regions)
                      if max(r1 - r0, c1 - c0) >= 2 * min_cells + 1
                      and min(r1 - r0, c1 - c0) >= door_cells]
        if not splittable:
            return None, None
        i = max(splittable,
                key=lambda i: (regions[i][1] - regions[i][0])
                * (regions[i][3] - regions[i][2]))
        r0, r1, c0, c1 = regions.pop(i)
        horizontal = (r1 - r0) >= (c1 - c0)
        if horizontal:
            p = int(rng.integers(r0 + min_cells, r1 - min_cells))
            q = int(rng.integers(c0, c1 - door_cells + 1))
            cells[p, c0:c1] = WALL
            cells[p, q:q + door_cells] = FREE
            doors.append((p, q, p, q + door_cells - 1))
            regions += [(r0, p, c0, c1), (p + 1, r1, c0, c1)]
        else:
            p = int(rng.integers(c0 + min_cells, c1 - min_cells))
            q = int(rng.integers(r0, r1 - door_cells + 1))
            cells[r0:r1, p] = WALL
            cells[q:q + door_cells, p] = FREE
            doors.append((q, p, q + door_cells - 1, p))
            regions += [(r0, r1, c0, p), (r0, r1, p + 1, c1)]
    return len(regions), doors


def _free_connected(cells) -> bool:
    free = cells == FREE
    if not free.any():
        return False
    _, n = ndimage.label(free)  # 4-connectivity default
    return n == 1


def generate_scene(seed: int, cfg: SceneGenConfig | None = None) -> Scene:
    """Deterministic procedural apartment: BSP room splits joined by doorways,
    plus rectangular furniture that never disconnects free space."""
    cfg = cfg or SceneGenConfig()
    H, W = cfg.grid_height, cfg.grid_width
    if H < 8 or W < 8:
        raise SceneGenerationError("grid too small")
    rng = substream(seed, "scene-gen")
    last_err = "room split infeasible (params too tight)"
    for _ in range(20):
        cells = np.full((H, W), WALL, dtype=np.uint8)
        cells[1:-1, 1:-1] = FREE
        rooms, doors = _carve_rooms(cells, rng, cfg)
        if rooms is None:
            continue
        # furniture: random rectangles, rejected if they disconnect free space
        interior = (H - 2) * (W - 2)
        target = int(cfg.furniture_density * interior)
        placed = 0
        tries = 0
        while placed < target and tries < cfg.max_retries:
            tries += 1
            fh = int(rng.integers(max(2, int(0.3 / cfg.resolution)),
                                  int(0.9 / cfg.resolution) + 1))
            fw = int(rng.integers(max(2, int(0.3 / cfg.resolution)),
                                  int(0.9 / cfg.resolution) + 1))
            if placed + fh * fw > target + fh * fw // 2:
                fh = max(2, fh // 2)
                fw = max(2, fw // 2)
            r = int(rng.integers(1, H - 1 - fh))
            c = int(rng.integers(1, W - 1 - fw))
            patch = cells[r:r + fh, c:c + fw]
            if (patch != FREE).any():
                continue
            cells[r:r + fh, c:c + fw] = FURNITURE
            if _free_connected(cells):
                placed += fh * fw
            else:
                cells[r:r + fh, c:c + fw] = FREE
        if not _free_connected(cells):
            last_err = "free space disconnected"
            continue
        return Scene(id=f"scene_{seed:08d}", cells=cells,
                     resolution=cfg.resolution, rng_seed=seed,
                     meta={"rooms": rooms, "doors": doors,
                           "furniture_cells": placed})
    raise SceneGenerationError(f"scene generation failed for seed {seed}: {last_err}")


# -------------------------------------------------------------------- file io


def scene_to_text(scene: Scene) -> str:
    lines = [
        f"pednav-scene {SCENE_FORMAT_VERSION}",
        f"resolution {scene.resolution!r}",
        f"width {scene.width}",
        f"height {scene.height}",
        f"seed {scene.rng_seed}",
    ]
    lut = np.array([ord(_CHAR_FOR[FREE]), ord(_CHAR_FOR[WALL]),
                    ord(_CHAR_FOR[FURNITURE])], dtype=np.uint8)
    for row in scene.cells:
        lines.append(lut[row].tobytes().decode("ascii"))
    return "\n".join(lines) + "\n"


def scene_from_text(text: str, scene_id: str = "scene") -> Scene:
    lines = text.splitlines()
    if len(lines) < 6 or not lines[0].startswith("pednav-scene "):
        raise ValueError("not a scene file")
    version = int(lines[0].split()[1])
    if version != SCENE_FORMAT_VERSION:
        raise ValueError(f"unsupported scene format version {version}")
    header = {}
    for ln in lines[1:5]:
        key, val = ln.split(maxsplit=1)
        header[key] = val
    res = float(header["resolution"])
    width = int(header["width"])
    height = int(header["height"])
    seed = int(header["seed"])
    rows = lines[5:5 + height]
    if len(rows) != height or any(len(r) != width for r in rows):
        raise ValueError("scene body does not match header dims")
    cells = np.empty((height, width), dtype=np.uint8)
    for i, row in enumerate(rows):
        for j, ch in enumerate(row):
            try:
                cells[i, j] = _LABEL_FOR[ch]
            except KeyError:
                raise ValueError(f"bad cell char {ch!r} at row {i}") from None
    return Scene(id=scene_id, cells=cells, resolution=res, rng_seed=seed)


def save_scene(scene: Scene, path):
    with open(path, "w", newline="\n") as f:
        f.write(scene_to_text(scene))


def load_scene(path) -> Scene:
    import os

    with open(path, newline="") as f:
        text = f.read()
    stem = os.path.splitext(os.path.basename(str(path)))[0]
    return scene_from_text(text, scene_id=stem)
