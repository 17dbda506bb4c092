import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pednav.config import SceneGenConfig
from pednav.rng import substream
from pednav.scene import (FREE, SamplingError, Scene, compute_distance_field,
                          generate_scene, sample_navigable_point,
                          sample_pedestrian_endpoints, save_scene, load_scene,
                          scene_from_text, scene_to_text, shortest_path)

from _oracles import dijkstra_reference


def random_grid(rng, h, w, p_block):
    cells = (rng.random((h, w)) < p_block).astype(np.uint8)
    free = np.argwhere(cells == 0)
    if len(free) == 0:
        cells[h // 2, w // 2] = 0
        free = np.array([[h // 2, w // 2]])
    src = free[rng.integers(len(free))]
    return cells, int(src[0]), int(src[1])


def test_distance_field_matches_reference_small():
    rng = np.random.default_rng(0)
    res = 0.05
    for _ in range(25):
        h = int(rng.integers(4, 33))
        w = int(rng.integers(4, 33))
        cells, sr, sc = random_grid(rng, h, w, float(rng.uniform(0.0, 0.45)))
        scene = Scene(id="t", cells=cells, resolution=res, rng_seed=0)
        goal = ((sc + 0.5) * res, (sr + 0.5) * res)
        field = compute_distance_field(scene, goal)
        ref = dijkstra_reference(scene.blocked, sr, sc, res)
        assert np.array_equal(field.values, ref)


def test_distance_field_source_zero_and_monotone(small_scene):
    rng = substream(1, "df")
    p = sample_navigable_point(small_scene, rng, 0.1)
    res = small_scene.resolution
    cell = (int(p[1] / res), int(p[0] / res))
    field = compute_distance_field(small_scene, p)
    assert field.values[cell] == 0.0
    finite = field.values[np.isfinite(field.values)]
    assert finite.min() == 0.0
    # any free neighbor differs by at most one diagonal step
    h, w = field.values.shape
    for r in range(1, h - 1):
        for c in range(1, w - 1):
            if not math.isfinite(field.values[r, c]):
                continue
            for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
                v = field.values[r + dr, c + dc]
                if math.isfinite(v):
                    assert abs(v - field.values[r, c]) <= res * math.sqrt(2) + 1e-12


GEN_CFG = SceneGenConfig(grid_width=80, grid_height=80, rooms_min=1,
                         rooms_max=2, furniture_density=0.01)


def test_generate_scene_deterministic():
    a = generate_scene(5, GEN_CFG)
    b = generate_scene(5, GEN_CFG)
    assert a.id == b.id
    assert np.array_equal(a.cells, b.cells)
    assert scene_to_text(a) == scene_to_text(b)


def test_generate_scene_seed_changes_layout():
    a = generate_scene(5, GEN_CFG)
    b = generate_scene(6, GEN_CFG)
    assert not np.array_equal(a.cells, b.cells)


def test_free_cells_connected(small_scene):
    free = np.argwhere(small_scene.cells == FREE)
    src = (int(free[0][0]), int(free[0][1]))
    field = compute_distance_field(small_scene, src)
    reachable = np.isfinite(field.values[small_scene.cells == FREE])
    assert reachable.all()


def test_text_round_trip_bit_exact(small_scene, tmp_path):
    text = scene_to_text(small_scene)
    again = scene_from_text(text, scene_id=small_scene.id)
    assert np.array_equal(again.cells, small_scene.cells)
    assert again.resolution == small_scene.resolution
    assert scene_to_text(again) == text
    path = tmp_path / f"{small_scene.id}.scene"
    save_scene(small_scene, path)
    loaded = load_scene(path)
    assert loaded.id == small_scene.id
    assert np.array_equal(loaded.cells, small_scene.cells)


def test_shortest_path_symmetric_and_sane(small_scene):
    rng = substream(2, "sp")
    for _ in range(10):
        a = sample_navigable_point(small_scene, rng, 0.18)
        b = sample_navigable_point(small_scene, rng, 0.18)
        p1 = shortest_path(small_scene, a, b, clearance=0.18)
        p2 = shortest_path(small_scene, b, a, clearance=0.18)
        assert p1.length == p2.length
        straight = math.hypot(a[0] - b[0], a[1] - b[1])
        assert p1.length >= straight - 1e-9
        # endpoints preserved
        assert np.allclose(p1.points[0], a)
        assert np.allclose(p1.points[-1], b)


def test_polyline_point_at_endpoints(small_scene):
    rng = substream(3, "pp")
    a = sample_navigable_point(small_scene, rng, 0.18)
    b = sample_navigable_point(small_scene, rng, 0.18)
    path = shortest_path(small_scene, a, b, clearance=0.18)
    assert np.allclose(path.point_at(0.0), path.points[0])
    assert np.allclose(path.point_at(path.length), path.points[-1])
    mid = path.point_at(path.length / 2)
    assert np.isfinite(mid).all()


def test_sample_navigable_point_clearance(small_scene):
    rng = substream(4, "cl")
    res = small_scene.resolution
    for _ in range(50):
        x, y = sample_navigable_point(small_scene, rng, 0.3)
        r, c = int(y / res), int(x / res)
        assert small_scene.cells[r, c] == FREE
        assert small_scene.clearance_field[r, c] >= 0.3


def test_pedestrian_endpoints_separation(small_scene):
    rng = substream(5, "pe")
    field_cache = {}
    for _ in range(10):
        p1, p2 = sample_pedestrian_endpoints(small_scene, rng,
                                             clearance=0.3,
                                             min_separation=3.0)
        res = small_scene.resolution
        cell = (int(p1[1] / res), int(p1[0] / res))
        if cell not in field_cache:
            field_cache[cell] = compute_distance_field(small_scene, p1)
        d = field_cache[cell].distance(p2)
        assert d >= 3.0


def test_impossible_separation_raises(small_scene):
    rng = substream(6, "imp")
    with pytest.raises(SamplingError):
        sample_pedestrian_endpoints(small_scene, rng, clearance=0.3,
                                    min_separation=1e9, max_retries=50)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_text_round_trip_random_grids(seed):
    rng = np.random.default_rng(seed)
    h = int(rng.integers(3, 20))
    w = int(rng.integers(3, 20))
    cells = rng.integers(0, 3, size=(h, w)).astype(np.uint8)
    scene = Scene(id="rt", cells=cells, resolution=0.05, rng_seed=0)
    again = scene_from_text(scene_to_text(scene), scene_id="rt")
    assert np.array_equal(again.cells, cells)
