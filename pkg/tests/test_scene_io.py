import json
import math

import numpy as np
import pytest

from errors import SceneParseError, SceneValidationError
from scene.generator import GeneratorConfig, generate_synthetic_scene
from scene.scene_io import (
    forecast_to_dict, load_scene, save_scene, scene_from_dict, scene_to_dict,
    split_history_future, validate_scene, write_forecast,
)
from scene.scene_types import Agent, MapGraph, MapRelation, RelationType, Scene


def _write(tmp_path, data, name="scene.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def test_load_minimal_scene(tmp_path, scene_dict):
    scene = load_scene(_write(tmp_path, scene_dict()))

    assert len(scene.agents) == 1
    assert len(scene.map.polylines) == 1
    assert scene.focal_indices() == [0]
    assert scene.num_steps == 5


def test_load_wraps_headings(tmp_path, scene_dict):
    scene = load_scene(_write(tmp_path, scene_dict(heading=4.0)))

    heading = scene.agents[0].states[0].heading
    assert heading == pytest.approx(4.0 - 2 * math.pi)
    assert -math.pi < heading <= math.pi


def test_single_point_polyline_is_rejected(tmp_path, scene_dict):
    with pytest.raises(SceneValidationError) as info:
        load_scene(_write(tmp_path, scene_dict(num_points=1)))

    assert any(v.startswith("map.polylines[0]") for v in info.value.violations)


def test_invalid_json_is_a_parse_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")

    with pytest.raises(SceneParseError):
        load_scene(path)


def test_missing_file_is_a_parse_error(tmp_path):
    with pytest.raises(SceneParseError, match="does not exist"):
        load_scene(tmp_path / "absent.json")


def test_invalid_utf8_is_a_parse_error(tmp_path):
    path = tmp_path / "scene_bad.json"
    path.write_bytes(b'{"id": "\xff\xfe"}')

    with pytest.raises(SceneParseError, match="UTF-8"):
        load_scene(path)


def test_directory_path_is_a_parse_error(tmp_path):
    folder = tmp_path / "scene_dir.json"
    folder.mkdir()

    with pytest.raises(SceneParseError, match="cannot read"):
        load_scene(folder)


def test_point_objects_are_a_parse_error(scene_dict):
    data = scene_dict()
    data["map"]["polylines"][0]["points"] = [{"x": 0.0, "y": 0.0}, {"x": 1.0, "y": 0.0}]

    with pytest.raises(SceneParseError, match="malformed"):
        scene_from_dict(data)


def test_state_objects_are_a_parse_error(scene_dict):
    data = scene_dict()
    data["agents"][0]["states"][0] = {"t": 0, "x": 0.0, "y": 0.0, "heading": 0.0, "valid": True}

    with pytest.raises(SceneParseError):
        scene_from_dict(data)


def test_unknown_agent_type_names_the_field(scene_dict):
    data = scene_dict()
    data["agents"][0]["type"] = "tractor"

    with pytest.raises(SceneParseError, match=r"agents\[0\]\.type"):
        scene_from_dict(data)


def test_missing_key_is_a_parse_error(scene_dict):
    data = scene_dict()
    del data["agents"][0]["states"]

    with pytest.raises(SceneParseError, match="states"):
        scene_from_dict(data)


def test_generated_scene_has_no_violations():
    scene = generate_synthetic_scene(GeneratorConfig(), 11)
    assert validate_scene(scene) == []


def test_out_of_range_relation_is_one_violation(scene_dict):
    scene = scene_from_dict(scene_dict())
    bad = Scene(
        scene.id,
        MapGraph(scene.map.polylines, (MapRelation(0, 1, RelationType.SUCCESSOR),)),
        scene.agents, scene.t_hist, scene.t_fut, scene.focal_agent_ids,
    )

    violations = validate_scene(bad)

    assert len(violations) == 1
    assert violations[0].startswith("map.relations[0].dst")


def test_short_track_is_one_violation():
    scene = generate_synthetic_scene(GeneratorConfig(num_agents=(1, 1)), 5)
    agent = scene.agents[0]
    short = Scene(
        scene.id, scene.map, (Agent(agent.id, agent.agent_type, agent.states[:109]),),
        scene.t_hist, scene.t_fut, scene.focal_agent_ids,
    )

    violations = validate_scene(short)

    assert violations == ["agents[0].states: expected 110 states, got 109"]


def test_unknown_focal_id_is_a_violation(scene_dict):
    data = scene_dict()
    data["focal"] = ["nobody"]

    assert validate_scene(scene_from_dict(data)) == ["focal: unknown agent id 'nobody'"]


def test_split_default_horizons():
    scene = generate_synthetic_scene(GeneratorConfig(), 2)

    history, future = split_history_future(scene)

    assert all(len(a.states) == 50 for a in history.agents)
    assert all(len(a.states) == 60 for a in future.agents)
    assert history.start == 0 and future.start == 50


def test_split_custom_horizons_concatenates_back():
    scene = generate_synthetic_scene(GeneratorConfig(t_hist=5, t_fut=10), 4)

    history, future = split_history_future(scene)

    assert history.length == 5 and future.length == 10
    for original, h, f in zip(scene.agents, history.agents, future.agents):
        assert h.states + f.states == original.states


def test_save_then_load_preserves_scene(tmp_path):
    scene = generate_synthetic_scene(GeneratorConfig(t_hist=10, t_fut=20), 8)

    loaded = load_scene(save_scene(scene, tmp_path / "nested" / "scene.json"))

    assert scene_to_dict(loaded) == scene_to_dict(scene)


def test_forecast_export_lists_focal_agents(tmp_path, scene_dict):
    scene = scene_from_dict(scene_dict())
    trajectories = np.zeros((1, 2, 3, 3))
    trajectories[0, 1, :, 0] = [1.0, 2.0, 3.0]
    probabilities = np.array([[0.25, 0.75]])

    payload = forecast_to_dict(scene, trajectories, probabilities)
    path = write_forecast(tmp_path / "out.forecast.json", payload)

    data = json.loads(path.read_text(encoding="utf-8"))
    assert data["scene_id"] == "minimal"
    assert [a["id"] for a in data["agents"]] == ["a0"]
    assert data["agents"][0]["probabilities"] == [0.25, 0.75]
    assert data["agents"][0]["trajectories"][1] == [[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]
