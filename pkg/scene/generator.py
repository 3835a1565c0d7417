"""Synthetic lane/agent scene generator used in place of a recorded dataset."""
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
from errors import ConfigError
from geometry.frames import wrap_angle
from scene.scene_types import (
    Agent, AgentState, AgentType, MapGraph, MapRelation, PointCategory,
    Polyline, PolylineCategory, RelationType, Scene,
)

TOPOLOGIES = ("straight", "curved", "t_intersection")
PATH_RESOLUTION = 0.25  # meters between samples of an agent route


@dataclass
class GeneratorConfig:
    """Parameters of the synthetic scene generator."""
    topology: str = "mixed"
    num_agents: Tuple[int, int] = (3, 8)
    speed_range: Tuple[float, float] = (2.0, 12.0)
    t_hist: int = config.DEFAULT_T_HIST
    t_fut: int = config.DEFAULT_T_FUT
    lane_width: float = 3.5
    segment_length: float = 20.0
    point_spacing: float = 2.0
    road_length: float = 300.0
    curve_radius: float = 150.0
    turn_radius: float = 8.0
    stationary_prob: float = 0.1
    partial_track_prob: float = 0.0
    random_pose: bool = True
    max_polylines: Optional[int] = None

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['num_agents'] = list(self.num_agents)
        data['speed_range'] = list(self.speed_range)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "GeneratorConfig":
        values = dict(data)
        if 'num_agents' in values:
            values['num_agents'] = tuple(values['num_agents'])
        if 'speed_range' in values:
            values['speed_range'] = tuple(values['speed_range'])
        return cls(**values)

    def validate(self):
        """Raises ConfigError naming the first invalid field."""
        if self.topology not in TOPOLOGIES + ("mixed",):
            raise ConfigError(f"generator.topology: unknown topology {self.topology!r}")
        lo, hi = self.num_agents
        if lo < 1 or hi < lo:
            raise ConfigError(f"generator.num_agents: invalid range {self.num_agents}")
        vmin, vmax = self.speed_range
        if vmin < 0 or vmax < vmin:
            raise ConfigError(f"generator.speed_range: invalid range {self.speed_range}")
        if self.t_hist < 1 or self.t_fut < 1:
            raise ConfigError("generator.t_hist/t_fut: must be >= 1")
        for name in ('lane_width', 'segment_length', 'point_spacing', 'road_length', 'curve_radius', 'turn_radius'):
            if getattr(self, name) <= 0:
                raise ConfigError(f"generator.{name}: must be > 0")
        if not (0.0 <= self.stationary_prob <= 1.0) or not (0.0 <= self.partial_track_prob <= 1.0):
            raise ConfigError("generator: probabilities must lie in [0, 1]")
        if self.max_polylines is not None and self.max_polylines < 1:
            raise ConfigError(f"generator.max_polylines: must be >= 1, got {self.max_polylines}")
        travel = vmax * (self.t_hist + self.t_fut) * config.STEP_SECONDS
        if travel >= self.road_length / 2:
            raise ConfigError(
                f"generator.road_length: {self.road_length} m too short for {travel:.1f} m of travel"
            )


@dataclass
class _Route:
    """Dense agent path with arc-length lookup."""
    points: np.ndarray
    turn_start: Optional[float] = None
    turn_length: float = 0.0
    cumulative: np.ndarray = field(init=False)

    def __post_init__(self):
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        self.cumulative = np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> float:
        return float(self.cumulative[-1])

    def position(self, s: np.ndarray) -> np.ndarray:
        s = np.clip(s, 0.0, self.length)
        x = np.interp(s, self.cumulative, self.points[:, 0])
        y = np.interp(s, self.cumulative, self.points[:, 1])
        return np.stack([x, y], axis=-1)


def _line(start, end, spacing: float) -> np.ndarray:
    start, end = np.asarray(start, float), np.asarray(end, float)
    n = max(2, int(math.ceil(np.linalg.norm(end - start) / spacing)) + 1)
    return start + np.linspace(0.0, 1.0, n)[:, None] * (end - start)


def _arc(center, radius: float, theta0: float, theta1: float, spacing: float) -> np.ndarray:
    n = max(2, int(math.ceil(abs(theta1 - theta0) * radius / spacing)) + 1)
    theta = np.linspace(theta0, theta1, n)
    return np.asarray(center, float) + radius * np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def _join(*pieces: np.ndarray) -> np.ndarray:
    out = [pieces[0]]
    for piece in pieces[1:]:
        if np.allclose(out[-1][-1], piece[0]):
            piece = piece[1:]
        out.append(piece)
    return np.concatenate(out, axis=0)


def _resample(points: np.ndarray, spacing: float) -> np.ndarray:
    route = _Route(points)
    n = max(2, int(math.ceil(route.length / spacing)) + 1)
    return route.position(np.linspace(0.0, route.length, n))


def _split_lane(centerline: np.ndarray, cfg: GeneratorConfig) -> List[np.ndarray]:
    """Cuts a lane centerline into ~segment_length pieces sampled every point_spacing."""
    route = _Route(centerline)
    num = max(1, int(round(route.length / cfg.segment_length)))
    bounds = np.linspace(0.0, route.length, num + 1)
    pieces = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        n = max(2, int(math.ceil((b - a) / cfg.point_spacing)) + 1)
        pieces.append(route.position(np.linspace(a, b, n)))
    return pieces


class _MapBuilder:
    """Accumulates polylines and relations while a layout is drawn."""

    def __init__(self):
        self.polylines: List[Polyline] = []
        self.relations: List[MapRelation] = []

    def add(self, points: np.ndarray, category: PolylineCategory) -> int:
        if category == PolylineCategory.CROSSWALK:
            cats = [PointCategory.CROSSWALK] * len(points)
        else:
            cats = [PointCategory.CENTER] * len(points)
            cats[0], cats[-1] = PointCategory.START, PointCategory.END
        self.polylines.append(Polyline(
            tuple((float(x), float(y)) for x, y in points), category, tuple(cats)
        ))
        return len(self.polylines) - 1

    def add_lane(self, centerline: np.ndarray, cfg: GeneratorConfig, category=PolylineCategory.LANE) -> List[int]:
        ids = [self.add(piece, category) for piece in _split_lane(centerline, cfg)]
        for a, b in zip(ids[:-1], ids[1:]):
            self.link(a, b)
        return ids

    def link(self, src: int, dst: int):
        self.relations.append(MapRelation(src, dst, RelationType.SUCCESSOR))
        self.relations.append(MapRelation(dst, src, RelationType.PREDECESSOR))

    def adjacent(self, lane_a: Sequence[int], lane_b: Sequence[int]):
        for a, b in zip(lane_a, lane_b):
            self.relations.append(MapRelation(a, b, RelationType.ADJACENT))
            self.relations.append(MapRelation(b, a, RelationType.ADJACENT))

    def closest_piece(self, lane: Sequence[int], point: np.ndarray) -> int:
        dists = [np.min(np.linalg.norm(np.asarray(self.polylines[i].points) - point, axis=1)) for i in lane]
        return lane[int(np.argmin(dists))]

    def build(self) -> MapGraph:
        return MapGraph(tuple(self.polylines), tuple(self.relations))


def _straight_layout(cfg: GeneratorConfig, rng: np.random.Generator, curved: bool):
    builder = _MapBuilder()
    length, w = cfg.road_length, cfg.lane_width
    offsets = (0.0, w, -w)
    bus_lane = rng.random() < 0.3

    def centerline(offset: float) -> np.ndarray:
        if not curved:
            return _line((0.0, offset), (length, offset), PATH_RESOLUTION)
        radius = cfg.curve_radius - offset
        return _arc((0.0, cfg.curve_radius), radius, -math.pi / 2, -math.pi / 2 + length / cfg.curve_radius,
                    PATH_RESOLUTION)

    routes = []
    lanes = []
    for i, offset in enumerate(offsets):
        line = centerline(offset)
        if offset < 0:
            line = line[::-1]
        category = PolylineCategory.BUS_LANE if (bus_lane and i == 1) else PolylineCategory.LANE
        lanes.append(builder.add_lane(line, cfg, category))
        routes.append(_Route(line))
    builder.adjacent(lanes[0], lanes[1])

    crossings = []
    if not curved:
        cx = length / 2
        builder.add(_line((cx, -1.5 * w - 2.0), (cx, 1.5 * w + 2.0), cfg.point_spacing), PolylineCategory.CROSSWALK)
        crossings.append(_Route(_line((cx, -1.5 * w - 30.0), (cx, 1.5 * w + 30.0), PATH_RESOLUTION)))
    return builder.build(), routes, [], crossings


def _t_layout(cfg: GeneratorConfig, rng: np.random.Generator):
    builder = _MapBuilder()
    half, h, r = cfg.road_length / 2, cfg.lane_width / 2, cfg.turn_radius
    stem_start = cfg.lane_width

    east = _line((-half, -h), (half, -h), PATH_RESOLUTION)
    west = _line((half, h), (-half, h), PATH_RESOLUTION)
    north = _line((h, stem_start), (h, half), PATH_RESOLUTION)
    south = _line((-h, half), (-h, stem_start), PATH_RESOLUTION)
    lane_ids = {name: builder.add_lane(line, cfg) for name, line in
                (('east', east), ('west', west), ('north', north), ('south', south))}

    # (approach line, arc center, start angle, end angle, exit line, from lane, to lane)
    turns = [
        (((-half, -h), (h - r, -h)), (h - r, -h + r), -math.pi / 2, 0.0, ((h, -h + r), (h, half)), 'east', 'north'),
        (((half, h), (h + r, h)), (h + r, h + r), -math.pi / 2, -math.pi, ((h, h + r), (h, half)), 'west', 'north'),
        (((-h, half), (-h, h + r)), (-h - r, h + r), 0.0, -math.pi / 2, ((-h - r, h), (-half, h)), 'south', 'west'),
        (((-h, half), (-h, -h + r)), (-h + r, -h + r), math.pi, 1.5 * math.pi, ((-h + r, -h), (half, -h)),
         'south', 'east'),
    ]
    turn_routes = []
    for approach, center, a0, a1, exit_line, src, dst in turns:
        arc = _arc(center, r, a0, a1, PATH_RESOLUTION)
        arc_id = builder.add(_resample(arc, cfg.point_spacing), PolylineCategory.INTERSECTION_LANE)
        builder.link(builder.closest_piece(lane_ids[src], arc[0]), arc_id)
        builder.link(arc_id, builder.closest_piece(lane_ids[dst], arc[-1]))
        approach_line = _line(approach[0], approach[1], PATH_RESOLUTION)
        path = _join(approach_line, arc, _line(exit_line[0], exit_line[1], PATH_RESOLUTION))
        turn_routes.append(_Route(path, turn_start=_Route(approach_line).length, turn_length=abs(a1 - a0) * r))

    cy = stem_start + 8.0
    builder.add(_line((-h - 2.0, cy), (h + 2.0, cy), cfg.point_spacing), PolylineCategory.CROSSWALK)
    crossings = [_Route(_line((-h - 30.0, cy), (h + 30.0, cy), PATH_RESOLUTION))]
    straight_routes = [_Route(east), _Route(west)]
    return builder.build(), straight_routes, turn_routes, crossings


def _headings(positions: np.ndarray) -> np.ndarray:
    """Heading = direction of the last displacement; carried forward while stationary."""
    headings = np.zeros(len(positions))
    current: Optional[float] = None
    first_moving: Optional[float] = None
    for t in range(1, len(positions)):
        d = positions[t] - positions[t - 1]
        if np.hypot(d[0], d[1]) > 1e-9:
            current = math.atan2(d[1], d[0])
            if first_moving is None:
                first_moving = current
        headings[t] = current if current is not None else 0.0
    if first_moving is not None:
        headings[0] = first_moving
        # steps before the first motion take the first motion direction
        for t in range(1, len(positions)):
            d = positions[t] - positions[t - 1]
            if np.hypot(d[0], d[1]) > 1e-9:
                break
            headings[t] = first_moving
    return headings


def _drive(route: _Route, s0: float, speed: float, num_steps: int) -> np.ndarray:
    s = s0 + speed * config.STEP_SECONDS * np.arange(num_steps)
    return route.position(s)


def _rigid(points: np.ndarray, angle: float, translation: np.ndarray) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return points @ rot.T + translation


def generate_synthetic_scene(cfg: GeneratorConfig, seed: int) -> Scene:
    """
    Generates one scene deterministically from (config, seed).

    Agents drive along lane centerlines at constant speed with headings aligned
    to their motion; agent 0 is the focal agent. On the T-intersection layout
    the focal agent's turn starts at the first future step.

    Args:
        cfg: Generator parameters
        seed: Integer seed

    Returns:
        Scene passing validate_scene

    Raises:
        ConfigError: If the configuration ranges are invalid
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    topology = cfg.topology if cfg.topology != "mixed" else TOPOLOGIES[int(rng.integers(len(TOPOLOGIES)))]

    if topology == "t_intersection":
        map_graph, straight_routes, turn_routes, crossings = _t_layout(cfg, rng)
    else:
        map_graph, straight_routes, turn_routes, crossings = _straight_layout(cfg, rng, topology == "curved")

    num_steps = cfg.t_hist + cfg.t_fut
    num_agents = int(rng.integers(cfg.num_agents[0], cfg.num_agents[1] + 1))
    vmin, vmax = cfg.speed_range
    future_seconds = cfg.t_fut * config.STEP_SECONDS

    agents = []
    for i in range(num_agents):
        speed = float(rng.uniform(vmin, vmax))
        agent_type = AgentType.VEHICLE
        if i == 0 and turn_routes:
            route = turn_routes[int(rng.integers(len(turn_routes)))]
            speed = max(speed, 1.05 * route.turn_length / future_seconds)
            s0 = route.turn_start - speed * cfg.t_hist * config.STEP_SECONDS
        else:
            kind = rng.random()
            if crossings and i > 0 and kind < 0.15:
                route = crossings[int(rng.integers(len(crossings)))]
                agent_type = AgentType.PEDESTRIAN
                speed = float(rng.uniform(0.8, 1.6))
            else:
                pool = straight_routes + turn_routes
                route = pool[int(rng.integers(len(pool)))]
                agent_type = [AgentType.VEHICLE, AgentType.VEHICLE, AgentType.BUS,
                              AgentType.CYCLIST, AgentType.OTHER][int(rng.integers(5))]
                if agent_type == AgentType.CYCLIST:
                    speed = float(rng.uniform(min(vmin, 3.0), min(vmax, 7.0)))
            if i > 0 and rng.random() < cfg.stationary_prob:
                speed = 0.0
            travel = speed * (num_steps - 1) * config.STEP_SECONDS
            s0 = float(rng.uniform(0.0, max(route.length - travel, 0.0)))

        positions = _drive(route, s0, speed, num_steps)
        valid = np.ones(num_steps, dtype=bool)
        if i > 0 and rng.random() < cfg.partial_track_prob:
            valid[:int(rng.integers(1, cfg.t_hist))] = False
        agents.append((f"agent_{i}", agent_type, positions, valid))

    angle, translation = 0.0, np.zeros(2)
    if cfg.random_pose:
        angle = float(rng.uniform(-math.pi, math.pi))
        translation = rng.uniform(-500.0, 500.0, size=2)

    polylines = tuple(
        Polyline(
            tuple((float(x), float(y)) for x, y in _rigid(np.asarray(pl.points), angle, translation)),
            pl.category, pl.point_categories,
        )
        for pl in map_graph.polylines
    )
    built_agents = []
    for agent_id, agent_type, positions, valid in agents:
        positions = _rigid(positions, angle, translation)
        headings = _headings(positions)
        states = tuple(
            AgentState(t, float(positions[t, 0]), float(positions[t, 1]), float(wrap_angle(float(headings[t]))),
                       bool(valid[t]))
            for t in range(num_steps)
        )
        built_agents.append(Agent(agent_id, agent_type, states))

    scene = Scene(
        id=f"{topology}_{seed}",
        map=MapGraph(polylines, map_graph.relations),
        agents=tuple(built_agents),
        t_hist=cfg.t_hist,
        t_fut=cfg.t_fut,
        focal_agent_ids=("agent_0",),
    )
    if cfg.max_polylines is not None:
        scene = crop_map(scene, cfg.max_polylines)
    return scene


def scene_seed(seed: int, index: int) -> int:
    """Per-index seed so scene `index` of a batch is independent of the batch size."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def generate_scenes(cfg: GeneratorConfig, seed: int, count: int) -> List[Scene]:
    return [generate_synthetic_scene(cfg, scene_seed(seed, i)) for i in range(count)]


def transform_scene(scene: Scene, angle: float, translation: Sequence[float]) -> Scene:
    """Applies one global rigid motion to every map point and agent state."""
    translation = np.asarray(translation, dtype=float)
    polylines = tuple(
        Polyline(
            tuple((float(x), float(y)) for x, y in _rigid(np.asarray(pl.points), angle, translation)),
            pl.category, pl.point_categories,
        )
        for pl in scene.map.polylines
    )
    agents = []
    for agent in scene.agents:
        xy = _rigid(np.array([[s.x, s.y] for s in agent.states]), angle, translation)
        states = tuple(
            AgentState(s.t, float(xy[j, 0]), float(xy[j, 1]), float(wrap_angle(s.heading + angle)), s.valid)
            for j, s in enumerate(agent.states)
        )
        agents.append(Agent(agent.id, agent.agent_type, states))
    return Scene(scene.id, MapGraph(polylines, scene.map.relations), tuple(agents),
                 scene.t_hist, scene.t_fut, scene.focal_agent_ids)


def crop_map(scene: Scene, max_polylines: int) -> Scene:
    """Keeps the polylines closest to the focal agents' last observed positions."""
    anchors = np.array([
        [scene.agents[i].states[scene.t_hist - 1].x, scene.agents[i].states[scene.t_hist - 1].y]
        for i in scene.focal_indices()
    ])
    dists = [
        float(np.min(np.linalg.norm(np.asarray(pl.points)[:, None, :] - anchors[None], axis=-1)))
        for pl in scene.map.polylines
    ]
    keep = sorted(np.argsort(dists, kind='stable')[:max_polylines].tolist())
    remap = {old: new for new, old in enumerate(keep)}
    relations = tuple(
        MapRelation(remap[r.src], remap[r.dst], r.relation)
        for r in scene.map.relations if r.src in remap and r.dst in remap
    )
    polylines = tuple(scene.map.polylines[i] for i in keep)
    return Scene(scene.id, MapGraph(polylines, relations), scene.agents,
                 scene.t_hist, scene.t_fut, scene.focal_agent_ids)


def select_agents(scene: Scene, max_agents: int) -> Scene:
    """Keeps the focal agents plus the nearest others, up to `max_agents`."""
    focal = scene.focal_indices()
    t = scene.t_hist - 1
    anchor = np.array([[scene.agents[i].states[t].x, scene.agents[i].states[t].y] for i in focal])
    others = [i for i in range(len(scene.agents)) if i not in focal]
    others.sort(key=lambda i: float(np.min(np.linalg.norm(
        anchor - np.array([scene.agents[i].states[t].x, scene.agents[i].states[t].y]), axis=-1))))
    keep = sorted(focal + others[:max(0, max_agents - len(focal))])
    return Scene(scene.id, scene.map, tuple(scene.agents[i] for i in keep),
                 scene.t_hist, scene.t_fut, scene.focal_agent_ids)
