"""Padded tensor view of a scene, the input format of the network."""
from dataclasses import dataclass, fields, replace
from typing import Optional

import torch

from scene.scene_types import (
    AGENT_TYPE_INDEX, POINT_CATEGORY_INDEX, POLYLINE_CATEGORY_INDEX, RELATION_INDEX,
    RelationType, Scene,
)


@dataclass
class SceneTensors:
    """
    Scene arrays for one scenario.

    Shapes: N agents, T = t_hist + t_fut steps, M polylines, P max points.
    """
    positions: torch.Tensor        # [N, T, 2]
    headings: torch.Tensor         # [N, T]
    valid: torch.Tensor            # [N, T] bool
    agent_types: torch.Tensor      # [N] long
    focal_mask: torch.Tensor       # [N] bool
    map_points: torch.Tensor       # [M, P, 2]
    map_point_valid: torch.Tensor  # [M, P] bool
    map_point_categories: torch.Tensor  # [M, P] long
    map_categories: torch.Tensor   # [M] long
    map_relations: torch.Tensor    # [M, M] long, NEARBY where no explicit relation
    t_hist: int
    t_fut: int

    @property
    def num_agents(self) -> int:
        return self.positions.shape[0]

    @property
    def num_polylines(self) -> int:
        return self.map_points.shape[0]

    def to(self, dtype: torch.dtype) -> "SceneTensors":
        """Casts the floating-point arrays."""
        changes = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, torch.Tensor) and value.is_floating_point():
                changes[f.name] = value.to(dtype)
        return replace(self, **changes)

    def with_future(self, positions: torch.Tensor, headings: torch.Tensor) -> "SceneTensors":
        """Copy whose states from t_hist on are replaced (history untouched)."""
        new_pos = self.positions.clone()
        new_head = self.headings.clone()
        new_pos[:, self.t_hist:] = positions
        new_head[:, self.t_hist:] = headings
        return replace(self, positions=new_pos, headings=new_head)


def scene_to_tensors(scene: Scene, dtype: torch.dtype = torch.float32, max_points: Optional[int] = None) -> SceneTensors:
    """
    Converts a Scene into padded tensors.

    Args:
        scene: Validated scene
        dtype: Floating-point dtype of the coordinate arrays
        max_points: Pad polylines to this many points (default: longest polyline)

    Returns:
        SceneTensors
    """
    num_steps = scene.t_hist + scene.t_fut
    states = [[(s.x, s.y, s.heading, float(s.valid)) for s in agent.states] for agent in scene.agents]
    agent_data = torch.tensor(states, dtype=torch.float64).reshape(len(scene.agents), num_steps, 4)

    polylines = scene.map.polylines
    num_points = max_points or max((len(pl.points) for pl in polylines), default=2)
    m = len(polylines)
    map_points = torch.zeros(m, num_points, 2, dtype=torch.float64)
    map_point_valid = torch.zeros(m, num_points, dtype=torch.bool)
    map_point_categories = torch.zeros(m, num_points, dtype=torch.long)
    for i, pl in enumerate(polylines):
        n = len(pl.points)
        map_points[i, :n] = torch.tensor(pl.points, dtype=torch.float64)
        # padding repeats the last point so padded segments stay finite
        map_points[i, n:] = map_points[i, n - 1]
        map_point_valid[i, :n] = True
        map_point_categories[i, :n] = torch.tensor([POINT_CATEGORY_INDEX[c] for c in pl.point_categories])

    relations = torch.full((m, m), RELATION_INDEX[RelationType.NEARBY], dtype=torch.long)
    for rel in scene.map.relations:
        relations[rel.src, rel.dst] = RELATION_INDEX[rel.relation]

    focal = set(scene.focal_agent_ids)
    return SceneTensors(
        positions=agent_data[..., :2].to(dtype),
        headings=agent_data[..., 2].to(dtype),
        valid=agent_data[..., 3] > 0.5,
        agent_types=torch.tensor([AGENT_TYPE_INDEX[a.agent_type] for a in scene.agents], dtype=torch.long),
        focal_mask=torch.tensor([a.id in focal for a in scene.agents], dtype=torch.bool),
        map_points=map_points.to(dtype),
        map_point_valid=map_point_valid,
        map_point_categories=map_point_categories,
        map_categories=torch.tensor([POLYLINE_CATEGORY_INDEX[pl.category] for pl in polylines], dtype=torch.long),
        map_relations=relations,
        t_hist=scene.t_hist,
        t_fut=scene.t_fut,
    )
