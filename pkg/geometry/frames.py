"""SE(2) reference frames, relative descriptors and angle utilities.

Scalar helpers (`relative_descriptor`, `transform_to_frame`, ...) work on
dataclasses and plain floats; the batched helpers work on torch tensors and are
what the network uses. Both share the same tensor implementation.
"""
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
import torch

from errors import NumericError

AngleLike = Union[float, np.ndarray, torch.Tensor]

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: AngleLike) -> AngleLike:
    """
    Wraps angles into (-pi, pi].

    Args:
        theta: Angle(s) in radians; float, numpy array or tensor

    Returns:
        Angle(s) congruent to the input modulo 2*pi, same type as the input

    Raises:
        NumericError: If any input is not finite
    """
    if isinstance(theta, torch.Tensor):
        if not bool(torch.isfinite(theta).all()):
            raise NumericError("wrap_angle: non-finite angle")
        return math.pi - torch.remainder(math.pi - theta, TWO_PI)
    if isinstance(theta, np.ndarray):
        if not np.isfinite(theta).all():
            raise NumericError("wrap_angle: non-finite angle")
        return math.pi - np.mod(math.pi - theta, TWO_PI)
    if not math.isfinite(theta):
        raise NumericError(f"wrap_angle: non-finite angle {theta}")
    return math.pi - (math.pi - theta) % TWO_PI


@dataclass(frozen=True)
class ReferenceFrame:
    """Local SE(2) frame: origin in meters, orientation in radians, time index."""
    x: float
    y: float
    orientation: float
    t: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'orientation', wrap_angle(float(self.orientation)))

    def as_pose(self, dtype: torch.dtype = torch.float64) -> torch.Tensor:
        return torch.tensor([self.x, self.y, self.orientation], dtype=dtype)


@dataclass(frozen=True)
class RelDescriptor:
    """Pose of a target frame seen from a source frame."""
    distance: float
    direction: float
    rel_orientation: float
    dt: int

    def as_tuple(self) -> Tuple[float, float, float, int]:
        return (self.distance, self.direction, self.rel_orientation, self.dt)


def safe_norm(vec: torch.Tensor) -> torch.Tensor:
    """Euclidean norm over the last axis with a zero (not NaN) gradient at 0."""
    sq = (vec * vec).sum(dim=-1)
    nonzero = sq > 0
    return torch.where(nonzero, torch.sqrt(torch.where(nonzero, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def safe_atan2(y: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """atan2 that returns 0 for a zero-length vector, with finite gradients."""
    nonzero = (x != 0) | (y != 0)
    angle = torch.atan2(torch.where(nonzero, y, torch.zeros_like(y)), torch.where(nonzero, x, torch.ones_like(x)))
    return torch.where(nonzero, angle, torch.zeros_like(angle))


def rotate(vec: torch.Tensor, angle: torch.Tensor) -> torch.Tensor:
    """Rotates 2D vectors [..., 2] counter-clockwise by `angle` [...]."""
    cos, sin = torch.cos(angle), torch.sin(angle)
    x, y = vec[..., 0], vec[..., 1]
    return torch.stack([cos * x - sin * y, sin * x + cos * y], dim=-1)


def to_local(xy: torch.Tensor, heading: torch.Tensor, frame: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Expresses global positions and headings in a local frame.

    Args:
        xy: Global positions [..., 2]
        heading: Global headings [...]
        frame: Frame poses (x, y, orientation) broadcastable to [..., 3]

    Returns:
        Tuple (local positions, wrapped local headings)
    """
    local_xy = rotate(xy - frame[..., :2], -frame[..., 2])
    return local_xy, wrap_angle(heading - frame[..., 2])


def to_global(xy: torch.Tensor, heading: torch.Tensor, frame: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Inverse of `to_local`."""
    global_xy = rotate(xy, frame[..., 2]) + frame[..., :2]
    return global_xy, wrap_angle(heading + frame[..., 2])


def relative_pose_features(
    src_pose: torch.Tensor,
    src_t: torch.Tensor,
    dst_pose: torch.Tensor,
    dst_t: torch.Tensor,
) -> torch.Tensor:
    """
    Batched relative descriptors between frames.

    Args:
        src_pose: Source poses [..., 3]
        src_t: Source time indices [...]
        dst_pose: Target poses [..., 3] (broadcast against the source)
        dst_t: Target time indices [...]

    Returns:
        Tensor [..., 4]: distance, direction, relative orientation, dt
    """
    offset = dst_pose[..., :2] - src_pose[..., :2]
    distance = safe_norm(offset)
    direction = wrap_angle(safe_atan2(offset[..., 1], offset[..., 0]) - src_pose[..., 2])
    direction = torch.where(distance > 0, direction, torch.zeros_like(direction))
    rel_orientation = wrap_angle(dst_pose[..., 2] - src_pose[..., 2])
    dt = (dst_t - src_t).to(distance.dtype)
    distance, direction, rel_orientation, dt = torch.broadcast_tensors(distance, direction, rel_orientation, dt)
    return torch.stack([distance, direction, rel_orientation, dt], dim=-1)


def descriptor_encoding_input(descriptor: torch.Tensor) -> torch.Tensor:
    """
    Turns [..., 4] descriptors into the [..., 6] vector fed to Fourier features.

    Angles enter as unit vectors so the encoding is continuous across +-pi.
    """
    distance, direction, rel_orientation, dt = descriptor.unbind(dim=-1)
    return torch.stack([
        distance,
        torch.cos(direction), torch.sin(direction),
        torch.cos(rel_orientation), torch.sin(rel_orientation),
        dt,
    ], dim=-1)


DESCRIPTOR_INPUT_DIM = 6


def relative_descriptor(src: ReferenceFrame, dst: ReferenceFrame) -> RelDescriptor:
    """
    Describes `dst` as seen from `src`.

    Coincident origins give distance 0 and direction 0.
    """
    features = relative_pose_features(
        src.as_pose(), torch.tensor(src.t), dst.as_pose(), torch.tensor(dst.t)
    )
    distance, direction, rel_orientation, dt = features.tolist()
    return RelDescriptor(distance, direction, rel_orientation, int(round(dt)))


def transform_to_frame(
    points: Sequence[Tuple[float, float, float]],
    frame: ReferenceFrame,
) -> List[Tuple[float, float, float]]:
    """
    Rigid SE(2) transform of global (x, y, heading) points into `frame`.

    Args:
        points: Global (x, y, heading) triples
        frame: Target reference frame

    Returns:
        Local (x, y, heading) triples, headings wrapped
    """
    if not points:
        return []
    data = torch.tensor(points, dtype=torch.float64)
    xy, heading = to_local(data[:, :2], data[:, 2], frame.as_pose())
    return [tuple(row) for row in torch.cat([xy, heading[:, None]], dim=-1).tolist()]


def transform_from_frame(
    points: Sequence[Tuple[float, float, float]],
    frame: ReferenceFrame,
) -> List[Tuple[float, float, float]]:
    """Inverse of `transform_to_frame`."""
    if not points:
        return []
    data = torch.tensor(points, dtype=torch.float64)
    xy, heading = to_global(data[:, :2], data[:, 2], frame.as_pose())
    return [tuple(row) for row in torch.cat([xy, heading[:, None]], dim=-1).tolist()]


def closest_points(
    query_xy: torch.Tensor,
    points: torch.Tensor,
    point_valid: torch.Tensor,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Closest point on each polyline's segment chain.

    Args:
        query_xy: Query positions [Q, 2]
        points: Polyline points [M, P, 2]
        point_valid: Point validity [M, P]

    Returns:
        Tuple (closest positions [Q, M, 2], segment tangent headings [Q, M],
        distances [Q, M]). Ties go to the lowest segment index.
    """
    seg_start = points[:, :-1]
    seg_vec = points[:, 1:] - seg_start
    seg_valid = point_valid[:, :-1] & point_valid[:, 1:]
    seg_len_sq = (seg_vec * seg_vec).sum(dim=-1)
    safe_len_sq = torch.where(seg_len_sq > 0, seg_len_sq, torch.ones_like(seg_len_sq))

    rel = query_xy[:, None, None, :] - seg_start[None]
    proj = (rel * seg_vec[None]).sum(dim=-1) / safe_len_sq[None]
    proj = proj.clamp(0.0, 1.0)
    candidates = seg_start[None] + proj[..., None] * seg_vec[None]
    dist = safe_norm(candidates - query_xy[:, None, None, :])
    dist = torch.where(seg_valid[None], dist, torch.full_like(dist, float('inf')))

    best = dist.argmin(dim=-1)
    gather_idx = best[..., None]
    best_dist = dist.gather(-1, gather_idx).squeeze(-1)
    best_xy = candidates.gather(2, gather_idx[..., None].expand(-1, -1, 1, 2)).squeeze(2)
    tangents = safe_atan2(seg_vec[..., 1], seg_vec[..., 0])
    best_tangent = tangents[None].expand(query_xy.shape[0], -1, -1).gather(-1, gather_idx).squeeze(-1)
    return best_xy, best_tangent, best_dist


def closest_point_descriptor(agent_frame: ReferenceFrame, polyline) -> RelDescriptor:
    """
    Descriptor from an agent frame to the closest point of a polyline.

    The target orientation is the tangent of the segment holding the closest
    point; the target shares the agent's time index.
    """
    points = torch.tensor(polyline.points, dtype=torch.float64)[None]
    valid = torch.ones(points.shape[:2], dtype=torch.bool)
    src = agent_frame.as_pose()
    xy, tangent, _ = closest_points(src[None, :2], points, valid)
    dst = torch.cat([xy[0, 0], tangent[0, :1]])
    t = torch.tensor(agent_frame.t)
    distance, direction, rel_orientation, dt = relative_pose_features(src, t, dst, t).tolist()
    return RelDescriptor(distance, direction, rel_orientation, int(round(dt)))


def polyline_frame_poses(points: torch.Tensor) -> torch.Tensor:
    """Polyline frames [M, 3]: first point plus first-segment tangent."""
    first_seg = points[:, 1] - points[:, 0]
    return torch.cat([points[:, 0], safe_atan2(first_seg[:, 1], first_seg[:, 0])[:, None]], dim=-1)
