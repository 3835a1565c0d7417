"""Scene data types: agents, map polylines and their relations."""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Tuple


class AgentType(str, Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"
    BUS = "bus"
    OTHER = "other"


class PolylineCategory(str, Enum):
    LANE = "lane"
    BUS_LANE = "bus_lane"
    INTERSECTION_LANE = "intersection_lane"
    CROSSWALK = "crosswalk"


class PointCategory(str, Enum):
    CENTER = "center"
    START = "start"
    END = "end"
    CROSSWALK = "crosswalk"


class RelationType(str, Enum):
    SUCCESSOR = "successor"
    PREDECESSOR = "predecessor"
    ADJACENT = "adjacent"
    NEARBY = "nearby"


# Stable integer ids for embedding tables
AGENT_TYPE_INDEX: Dict[AgentType, int] = {t: i for i, t in enumerate(AgentType)}
POLYLINE_CATEGORY_INDEX: Dict[PolylineCategory, int] = {c: i for i, c in enumerate(PolylineCategory)}
POINT_CATEGORY_INDEX: Dict[PointCategory, int] = {c: i for i, c in enumerate(PointCategory)}
RELATION_INDEX: Dict[RelationType, int] = {r: i for i, r in enumerate(RelationType)}


@dataclass(frozen=True)
class AgentState:
    """State of one agent at one time index (10 Hz)."""
    t: int
    x: float
    y: float
    heading: float
    valid: bool = True


@dataclass(frozen=True)
class Agent:
    id: str
    agent_type: AgentType
    states: Tuple[AgentState, ...]


@dataclass(frozen=True)
class Polyline:
    """Vectorized road element; points in meters."""
    points: Tuple[Tuple[float, float], ...]
    category: PolylineCategory
    point_categories: Tuple[PointCategory, ...]


@dataclass(frozen=True)
class MapRelation:
    src: int
    dst: int
    relation: RelationType


@dataclass(frozen=True)
class MapGraph:
    polylines: Tuple[Polyline, ...]
    relations: Tuple[MapRelation, ...] = ()


@dataclass(frozen=True)
class Scene:
    """
    A scenario: static map plus agents sharing one time axis.

    Every agent holds exactly t_hist + t_fut states; states with t < t_hist are
    observed history, the rest is the ground-truth future.
    """
    id: str
    map: MapGraph
    agents: Tuple[Agent, ...]
    t_hist: int
    t_fut: int
    focal_agent_ids: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def num_steps(self) -> int:
        return self.t_hist + self.t_fut

    def agent_index(self, agent_id: str) -> int:
        for i, agent in enumerate(self.agents):
            if agent.id == agent_id:
                return i
        raise KeyError(agent_id)

    def focal_indices(self) -> List[int]:
        return [self.agent_index(agent_id) for agent_id in self.focal_agent_ids]


@dataclass(frozen=True)
class TrajectoryView:
    """A window of every agent's states starting at time index `start`."""
    start: int
    length: int
    agents: Tuple[Agent, ...]
