"""Observation-space augmentations (random/center crop, cutout) and the
dynamic-pedestrian episode augmentation.

Image ops are pure given an rng and always return fresh arrays; the
non-image fields of an observation pass through untouched.
"""

import logging
import math

import numpy as np

from .config import AugmentConfig, CropConfig, CutoutConfig, SimConfig
from .scene import Scene, sample_pedestrian_endpoints, shortest_path
from .simcore import Pedestrian

logger = logging.getLogger(__name__)

MIN_CROP_INPUT = 12


def crop_dims(h: int, w: int, shrink_fraction: float = 0.08) -> tuple:
    return (math.floor((1.0 - shrink_fraction) * h),
            math.floor((1.0 - shrink_fraction) * w))


def random_crop(img: np.ndarray, rng, params: CropConfig | None = None) -> np.ndarray:
    """Random window of floor((1-shrink) * dims), uniform over placements."""
    params = params or CropConfig()
    h, w = img.shape
    if h < MIN_CROP_INPUT or w < MIN_CROP_INPUT:
        raise ValueError(f"crop input {h}x{w} below {MIN_CROP_INPUT}x{MIN_CROP_INPUT}")
    ch, cw = crop_dims(h, w, params.shrink_fraction)
    r0 = int(rng.integers(0, h - ch + 1))
    c0 = int(rng.integers(0, w - cw + 1))
    return img[r0:r0 + ch, c0:c0 + cw].copy()


def center_crop(img: np.ndarray, params: CropConfig | None = None) -> np.ndarray:
    """Deterministic counterpart of random_crop; ties fall toward top-left."""
    params = params or CropConfig()
    h, w = img.shape
    if h < MIN_CROP_INPUT or w < MIN_CROP_INPUT:
        raise ValueError(f"crop input {h}x{w} below {MIN_CROP_INPUT}x{MIN_CROP_INPUT}")
    ch, cw = crop_dims(h, w, params.shrink_fraction)
    r0 = (h - ch) // 2
    c0 = (w - cw) // 2
    return img[r0:r0 + ch, c0:c0 + cw].copy()


def cutout_dims(n_pixels: int, scale: float, aspect: float,
                aspect_range=(0.3, 3.33),
                scale_envelope=(0.018, 0.34)) -> tuple:
    """Integer rectangle dims for a target area fraction and aspect ratio.

    Enumerates heights adjacent to sqrt(area * aspect); for each, the
    area-preserving width is clamped into the aspect cone h/hi <= w <= h/lo
    (nonempty for every h >= 1 because 1/lo - 1/hi > 3).  Candidates whose
    realized area fraction stays inside scale_envelope (the sampled scale
    range widened by integer-quantization slack) outrank the rest, then the
    smallest area error wins; the envelope tier matters because the raw
    error minimizer can land just outside it when the aspect draw hugs a
    cone edge.
    """
    area = scale * n_pixels
    lo, hi = aspect_range
    e_lo, e_hi = scale_envelope
    rh0 = math.sqrt(max(area, 1.0) * aspect)
    cands = set()
    for rh in range(max(1, math.floor(rh0) - 2), math.ceil(rh0) + 3):
        w_lo = max(1, math.ceil(rh / hi))
        w_hi = max(1, math.floor(rh / lo))
        for rw in (math.floor(area / rh), math.ceil(area / rh)):
            cands.add((rh, min(max(rw, w_lo), w_hi)))

    def rank(c):
        frac = c[0] * c[1] / n_pixels
        return (not e_lo <= frac <= e_hi, abs(c[0] * c[1] - area), c)

    return min(cands, key=rank)


def random_cutout(img: np.ndarray, rng,
                  params: CutoutConfig | None = None) -> np.ndarray:
    """Zero out one rectangle with area fraction ~ U(scale_range) and aspect
    ~ U(aspect_range), resampled until it fits (<= max_tries, else skipped)."""
    params = params or CutoutConfig()
    h, w = img.shape
    out = img.copy()
    for _ in range(params.max_tries):
        scale = float(rng.uniform(*params.scale_range))
        aspect = float(rng.uniform(*params.aspect_range))
        rh, rw = cutout_dims(h * w, scale, aspect)
        if rh > h or rw > w:
            continue
        r0 = int(rng.integers(0, h - rh + 1))
        c0 = int(rng.integers(0, w - rw + 1))
        out[r0:r0 + rh, c0:c0 + rw] = params.fill_value
        return out
    logger.debug("cutout skipped: no fitting rectangle in %d tries on %dx%d",
                 params.max_tries, h, w)
    return out


def apply_pipeline(obs, cfg: AugmentConfig, rng, mode: str):
    """Run the configured image ops in order. Train mode uses the random
    variants; eval mode center-crops and skips cutout so evaluation is
    deterministic. goal_vector and prev_action pass through unchanged."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    if not cfg.ops:
        return obs
    img = obs.depth
    for op in cfg.ops:
        if op == "crop":
            img = (random_crop(img, rng, cfg.crop) if mode == "train"
                   else center_crop(img, cfg.crop))
        elif op == "cutout":
            if mode == "train":
                img = random_cutout(img, rng, cfg.cutout)
        else:
            raise ValueError(f"unknown augmentation op {op!r}")
    from .tasks import Observation
    return Observation(depth=img, goal_vector=obs.goal_vector,
                       prev_action=obs.prev_action)


def populate_pedestrians(scene: Scene, n: int, rng,
                         sim: SimConfig | None = None,
                         min_separation: float = 3.0) -> list:
    """n independent patrol tracks: endpoints >= min_separation apart in
    free-space geodesic distance, per-pedestrian speed = v_max * (1 - u) with
    u ~ U[0, 0.1], initial arc uniform along the path, direction uniform."""
    if n < 0:
        raise ValueError("pedestrian count must be >= 0")
    sim = sim or SimConfig()
    peds = []
    for _ in range(n):
        p1, p2 = sample_pedestrian_endpoints(scene, rng,
                                             clearance=sim.ped_radius,
                                             min_separation=min_separation)
        path = shortest_path(scene, p1, p2,
                             clearance=sim.ped_radius + scene.clearance_pad())
        u = float(rng.uniform(0.0, 0.1))
        speed = sim.v_max * (1.0 - u)
        arc = float(rng.uniform(0.0, path.length))
        direction = 1 if rng.random() < 0.5 else -1
        peds.append(Pedestrian(path=path, arc_position=arc,
                               direction=direction, speed=speed,
                               radius=sim.ped_radius))
    return peds


# named training configurations for the transfer study: image ops plus the
# pedestrian-count component of the dynamic augmentation
AUG_PRESETS = {
    "none": ((), 0),
    "crop": (("crop",), 0),
    "cutout": (("cutout",), 0),
    "crop_cutout": (("crop", "cutout"), 0),
    "dynamic": ((), 6),
    "dynamic_crop": (("crop",), 6),
    "dynamic_cutout": (("cutout",), 6),
}


def preset_config(name: str, base: AugmentConfig | None = None) -> AugmentConfig:
    if name not in AUG_PRESETS:
        raise ValueError(f"unknown augmentation preset {name!r}; "
                         f"choose from {sorted(AUG_PRESETS)}")
    ops, peds = AUG_PRESETS[name]
    base = base or AugmentConfig()
    return AugmentConfig(ops=tuple(ops), train_ped_count=peds,
                         crop=base.crop, cutout=base.cutout)
