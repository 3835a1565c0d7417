import json
import math

import numpy as np
import pytest

import config
from errors import ConfigError
from evaluation.metrics import filter_turns
from geometry.frames import wrap_angle
from scene.generator import (
    GeneratorConfig, crop_map, generate_scenes, generate_synthetic_scene, scene_seed,
    select_agents, transform_scene,
)
from scene.scene_io import scene_to_dict, validate_scene


def _xy(agent):
    return np.array([[s.x, s.y] for s in agent.states])


def test_same_seed_gives_identical_scenes():
    cfg = GeneratorConfig(topology="straight")

    first = json.dumps(scene_to_dict(generate_synthetic_scene(cfg, 7)))
    second = json.dumps(scene_to_dict(generate_synthetic_scene(cfg, 7)))

    assert first == second


def test_different_seeds_differ():
    cfg = GeneratorConfig()
    assert scene_to_dict(generate_synthetic_scene(cfg, 1)) != scene_to_dict(generate_synthetic_scene(cfg, 2))


@pytest.mark.parametrize("topology", ["straight", "curved", "t_intersection", "mixed"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_generated_scenes_are_valid(topology, seed):
    scene = generate_synthetic_scene(GeneratorConfig(topology=topology), seed)

    assert validate_scene(scene) == []
    assert scene.focal_agent_ids == ("agent_0",)
    assert 3 <= len(scene.agents) <= 8


def test_straight_road_has_constant_speed_and_aligned_heading():
    cfg = GeneratorConfig(topology="straight")
    scene = generate_synthetic_scene(cfg, 21)

    for agent in scene.agents:
        xy = _xy(agent)
        steps = np.linalg.norm(np.diff(xy, axis=0), axis=1)
        np.testing.assert_allclose(steps, steps[0], atol=1e-6)
        if steps[0] < 1e-9:
            continue
        motion = np.arctan2(np.diff(xy[:, 1]), np.diff(xy[:, 0]))
        headings = np.array([s.heading for s in agent.states[1:]])
        np.testing.assert_allclose(wrap_angle(headings - motion), 0.0, atol=1e-6)

    focal = _xy(scene.agents[0])
    focal_speed = np.linalg.norm(focal[1] - focal[0]) / config.STEP_SECONDS
    assert cfg.speed_range[0] - 1e-6 <= focal_speed <= cfg.speed_range[1] + 1e-6


def test_t_intersection_focal_agent_turns():
    scenes = [generate_synthetic_scene(GeneratorConfig(topology="t_intersection"), seed) for seed in range(3)]

    turning = filter_turns(scenes)

    assert turning == [(0, 0), (1, 0), (2, 0)]


def test_invalid_ranges_raise_config_error():
    with pytest.raises(ConfigError, match="num_agents"):
        generate_synthetic_scene(GeneratorConfig(num_agents=(3, 1)), 0)
    with pytest.raises(ConfigError, match="topology"):
        generate_synthetic_scene(GeneratorConfig(topology="roundabout"), 0)
    with pytest.raises(ConfigError, match="road_length"):
        generate_synthetic_scene(GeneratorConfig(road_length=50.0), 0)


def test_scene_index_seed_does_not_depend_on_count():
    cfg = GeneratorConfig(t_hist=10, t_fut=20)

    three = generate_scenes(cfg, 0, 3)
    two = generate_scenes(cfg, 0, 2)

    assert scene_to_dict(three[1]) == scene_to_dict(two[1])
    assert scene_seed(0, 1) != scene_seed(1, 0)


def test_max_polylines_crops_the_map():
    scene = generate_synthetic_scene(GeneratorConfig(t_hist=10, t_fut=20, max_polylines=3), 4)

    assert len(scene.map.polylines) == 3
    assert validate_scene(scene) == []


def test_crop_and_select_keep_focal_agent():
    scene = generate_synthetic_scene(GeneratorConfig(num_agents=(6, 6)), 9)

    small = select_agents(crop_map(scene, 2), 2)

    assert len(small.map.polylines) == 2
    assert len(small.agents) == 2
    assert small.agents[small.focal_indices()[0]].id == "agent_0"
    assert validate_scene(small) == []


def test_transform_scene_moves_everything_rigidly():
    scene = generate_synthetic_scene(GeneratorConfig(topology="curved"), 3)
    angle, shift = 0.7, (12.0, -4.0)

    moved = transform_scene(scene, angle, shift)

    assert validate_scene(moved) == []
    a, b = _xy(scene.agents[0]), _xy(scene.agents[1])
    ma, mb = _xy(moved.agents[0]), _xy(moved.agents[1])
    np.testing.assert_allclose(np.linalg.norm(a - b, axis=1), np.linalg.norm(ma - mb, axis=1), atol=1e-9)
    c, s = math.cos(angle), math.sin(angle)
    expected = a[0] @ np.array([[c, -s], [s, c]]).T + np.array(shift)
    np.testing.assert_allclose(ma[0], expected, atol=1e-9)
    turned = wrap_angle(moved.agents[0].states[0].heading - scene.agents[0].states[0].heading)
    assert turned == pytest.approx(angle)
