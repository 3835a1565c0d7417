"""Scenario files: parsing, serialization, validation and the history/future split."""
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

from errors import SceneParseError, SceneValidationError
from geometry.frames import wrap_angle
from scene.scene_types import (
    Agent, AgentState, AgentType, MapGraph, MapRelation, PointCategory,
    Polyline, PolylineCategory, RelationType, Scene, TrajectoryView,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _parse_enum(enum_cls, value: Any, field_name: str):
    try:
        return enum_cls(value)
    except ValueError:
        allowed = ", ".join(e.value for e in enum_cls)
        raise SceneParseError(f"{field_name}: unknown value {value!r} (allowed: {allowed})")


def _require(data: Dict[str, Any], key: str, where: str) -> Any:
    if not isinstance(data, dict) or key not in data:
        raise SceneParseError(f"{where}: missing key '{key}'")
    return data[key]


def scene_from_dict(data: Dict[str, Any]) -> Scene:
    """
    Builds a Scene from the decoded scenario object.

    Headings are wrapped into (-pi, pi] on the way in.

    Raises:
        SceneParseError: If a key is missing or a value has the wrong shape
    """
    try:
        t_hist = int(_require(data, 't_hist', 'scene'))
        t_fut = int(_require(data, 't_fut', 'scene'))
        map_data = _require(data, 'map', 'scene')

        polylines = []
        for i, pl in enumerate(_require(map_data, 'polylines', 'map')):
            where = f"map.polylines[{i}]"
            points = tuple((float(p[0]), float(p[1])) for p in _require(pl, 'points', where))
            category = _parse_enum(PolylineCategory, _require(pl, 'category', where), f"{where}.category")
            point_categories = tuple(
                _parse_enum(PointCategory, c, f"{where}.point_categories[{j}]")
                for j, c in enumerate(_require(pl, 'point_categories', where))
            )
            polylines.append(Polyline(points, category, point_categories))

        relations = []
        for i, rel in enumerate(map_data.get('relations', [])):
            if len(rel) != 3:
                raise SceneParseError(f"map.relations[{i}]: expected [src, dst, type]")
            relations.append(MapRelation(
                int(rel[0]), int(rel[1]),
                _parse_enum(RelationType, rel[2], f"map.relations[{i}].type"),
            ))

        agents = []
        for i, ag in enumerate(_require(data, 'agents', 'scene')):
            where = f"agents[{i}]"
            states = []
            for j, st in enumerate(_require(ag, 'states', where)):
                if len(st) != 5:
                    raise SceneParseError(f"{where}.states[{j}]: expected [t, x, y, heading, valid]")
                heading = float(st[3])
                if math.isfinite(heading):
                    heading = wrap_angle(heading)
                states.append(AgentState(int(st[0]), float(st[1]), float(st[2]), heading, bool(st[4])))
            agents.append(Agent(
                str(_require(ag, 'id', where)),
                _parse_enum(AgentType, _require(ag, 'type', where), f"{where}.type"),
                tuple(states),
            ))

        return Scene(
            id=str(_require(data, 'id', 'scene')),
            map=MapGraph(tuple(polylines), tuple(relations)),
            agents=tuple(agents),
            t_hist=t_hist,
            t_fut=t_fut,
            focal_agent_ids=tuple(str(f) for f in data.get('focal', [])),
        )
    except SceneParseError:
        raise
    except (TypeError, ValueError, IndexError, KeyError) as e:
        raise SceneParseError(f"malformed scenario: {e!r}")


def scene_to_dict(scene: Scene) -> Dict[str, Any]:
    """Serializable scenario object; key order is fixed so output is byte-stable."""
    return {
        'id': scene.id,
        't_hist': scene.t_hist,
        't_fut': scene.t_fut,
        'map': {
            'polylines': [
                {
                    'points': [[x, y] for x, y in pl.points],
                    'category': pl.category.value,
                    'point_categories': [c.value for c in pl.point_categories],
                }
                for pl in scene.map.polylines
            ],
            'relations': [[r.src, r.dst, r.relation.value] for r in scene.map.relations],
        },
        'agents': [
            {
                'id': agent.id,
                'type': agent.agent_type.value,
                'states': [[s.t, s.x, s.y, s.heading, s.valid] for s in agent.states],
            }
            for agent in scene.agents
        ],
        'focal': list(scene.focal_agent_ids),
    }


def load_scene(path: PathLike) -> Scene:
    """
    Loads and validates one scenario file.

    Args:
        path: Path of the scenario file (UTF-8 JSON)

    Returns:
        Scene passing validate_scene

    Raises:
        SceneParseError: If the file is missing or malformed
        SceneValidationError: If any invariant is violated
    """
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise SceneParseError(f"{path}: file does not exist")
    except json.JSONDecodeError as e:
        raise SceneParseError(f"{path}: invalid JSON ({e})")
    except UnicodeDecodeError as e:
        raise SceneParseError(f"{path}: not valid UTF-8 ({e.reason})")
    except OSError as e:
        raise SceneParseError(f"{path}: cannot read file ({e.strerror or e})")

    scene = scene_from_dict(data)
    violations = validate_scene(scene)
    if violations:
        raise SceneValidationError(violations, source=str(path))
    return scene


def save_scene(scene: Scene, path: PathLike) -> Path:
    """Writes a scene in the scenario format, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(scene_to_dict(scene), f, indent=1)
        f.write("\n")
    return path


def validate_scene(scene: Scene) -> List[str]:
    """
    Checks every scene invariant.

    Returns:
        List of violations, each naming the offending field. Empty iff valid.
    """
    violations: List[str] = []
    if scene.t_hist < 1:
        violations.append(f"t_hist: must be >= 1, got {scene.t_hist}")
    if scene.t_fut < 1:
        violations.append(f"t_fut: must be >= 1, got {scene.t_fut}")

    num_polylines = len(scene.map.polylines)
    for i, pl in enumerate(scene.map.polylines):
        where = f"map.polylines[{i}]"
        if len(pl.points) < 2:
            violations.append(f"{where}.points: expected >= 2 points, got {len(pl.points)}")
        if len(pl.point_categories) != len(pl.points):
            violations.append(
                f"{where}.point_categories: expected {len(pl.points)} entries, got {len(pl.point_categories)}"
            )
        for j in range(1, len(pl.points)):
            if pl.points[j] == pl.points[j - 1]:
                violations.append(f"{where}.points[{j}]: identical to previous point")
        if not all(math.isfinite(c) for p in pl.points for c in p):
            violations.append(f"{where}.points: non-finite coordinate")

    for i, rel in enumerate(scene.map.relations):
        where = f"map.relations[{i}]"
        if not (0 <= rel.src < num_polylines):
            violations.append(f"{where}.src: index {rel.src} out of range (M={num_polylines})")
        if not (0 <= rel.dst < num_polylines):
            violations.append(f"{where}.dst: index {rel.dst} out of range (M={num_polylines})")
        if rel.src == rel.dst:
            violations.append(f"{where}: self-relation on polyline {rel.src}")

    expected = scene.t_hist + scene.t_fut
    seen_ids = set()
    for i, agent in enumerate(scene.agents):
        where = f"agents[{i}]"
        if agent.id in seen_ids:
            violations.append(f"{where}.id: duplicate id {agent.id!r}")
        seen_ids.add(agent.id)
        if len(agent.states) != expected:
            violations.append(f"{where}.states: expected {expected} states, got {len(agent.states)}")
        for j, state in enumerate(agent.states):
            if state.t != j:
                violations.append(f"{where}.states[{j}].t: expected time index {j}, got {state.t}")
                break
        for j, state in enumerate(agent.states):
            values = (state.x, state.y, state.heading)
            if not all(math.isfinite(v) for v in values):
                violations.append(f"{where}.states[{j}]: non-finite value")
                break
            if not (-math.pi < state.heading <= math.pi):
                violations.append(f"{where}.states[{j}].heading: {state.heading} not wrapped to (-pi, pi]")
                break

    for agent_id in scene.focal_agent_ids:
        if agent_id not in seen_ids:
            violations.append(f"focal: unknown agent id {agent_id!r}")
    return violations


def split_history_future(scene: Scene) -> Tuple[TrajectoryView, TrajectoryView]:
    """
    Splits every agent at t_hist.

    Returns:
        Tuple (history view with t < t_hist, future view with t >= t_hist)
    """
    history = tuple(
        Agent(a.id, a.agent_type, a.states[:scene.t_hist]) for a in scene.agents
    )
    future = tuple(
        Agent(a.id, a.agent_type, a.states[scene.t_hist:scene.t_hist + scene.t_fut]) for a in scene.agents
    )
    return (
        TrajectoryView(start=0, length=scene.t_hist, agents=history),
        TrajectoryView(start=scene.t_hist, length=scene.t_fut, agents=future),
    )


def forecast_to_dict(
    scene: Scene,
    trajectories: np.ndarray,
    probabilities: np.ndarray,
    agent_indices: Sequence[int] = None,
) -> Dict[str, Any]:
    """
    Prediction output object: per focal agent, K rows of (x, y) pairs plus
    one probability row.

    Args:
        scene: Scene the forecast belongs to
        trajectories: Array [N, K, T_fut, >=2] in global coordinates
        probabilities: Array [N, K]
        agent_indices: Agents to export (default: focal agents)
    """
    if agent_indices is None:
        agent_indices = scene.focal_indices()
    agents = []
    for n in agent_indices:
        agents.append({
            'id': scene.agents[n].id,
            'trajectories': [
                [[float(x), float(y)] for x, y in trajectories[n, k, :, :2]]
                for k in range(trajectories.shape[1])
            ],
            'probabilities': [float(p) for p in probabilities[n]],
        })
    return {'scene_id': scene.id, 'agents': agents}


def write_forecast(path: PathLike, payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=1)
        f.write("\n")
    logger.info("forecast_written | path=%s | agents=%d", path, len(payload['agents']))
    return path
