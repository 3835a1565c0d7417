"""Polyline map encoder: point tokens, category-query pooling, polyline self-attention."""
from dataclasses import dataclass

import torch
import torch.nn as nn

from geometry.frames import (
    descriptor_encoding_input, polyline_frame_poses, relative_pose_features, rotate, safe_atan2,
)
from model.model_config import DecoderConfig
from network.attention import RelAttentionLayer
from network.layers import FourierEmbedding, embedding_lookup
from scene.scene_types import PointCategory, PolylineCategory, RelationType
from scene.tensors import SceneTensors


@dataclass
class MapTokens:
    tokens: torch.Tensor  # [M, D]
    frames: torch.Tensor  # [M, 3] first point + first-segment tangent

    @property
    def num_polylines(self) -> int:
        return self.tokens.shape[0]


def _pairwise_encoding(src: torch.Tensor, dst: torch.Tensor) -> torch.Tensor:
    """Relative encoding [..., 6] between poses at the same time step."""
    zero = torch.zeros((), dtype=torch.long)
    return descriptor_encoding_input(relative_pose_features(src, zero, dst, zero))


class MapEncoder(nn.Module):
    """
    Encodes every polyline into one token.

    Point tokens carry the offset to the next point in the polyline frame plus
    a point-category embedding. A polyline-category query pools them, then the
    polyline tokens self-attend within the interaction radius with relation
    embeddings on keys and values.
    """

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        d = cfg.embed_dim
        self.radius = cfg.radius
        self.point_embed = FourierEmbedding(2, d, cfg.num_freq_bands, dropout=cfg.dropout)
        self.point_category = nn.Embedding(len(PointCategory), d)
        self.polyline_category = nn.Embedding(len(PolylineCategory), d)
        self.relation = nn.Embedding(len(RelationType), d)
        self.pool = RelAttentionLayer(d, cfg.num_heads, cfg.num_freq_bands, dropout=cfg.dropout)
        self.layers = nn.ModuleList([
            RelAttentionLayer(d, cfg.num_heads, cfg.num_freq_bands, dropout=cfg.dropout)
            for _ in range(cfg.map_rounds)
        ])

    def encode_points(self, points: torch.Tensor, point_categories: torch.Tensor, frames: torch.Tensor) -> torch.Tensor:
        """
        Args:
            points: Polyline points [M, P, 2]
            point_categories: Point categories [M, P]
            frames: Polyline frames [M, 3]

        Returns:
            Point tokens [M, P-1, D], one per point except the last
        """
        offsets = points[:, 1:] - points[:, :-1]
        local = rotate(offsets, -frames[:, None, 2])
        categories = embedding_lookup(self.point_category.weight, point_categories[:, :-1])
        return self.point_embed(local) + categories

    def pool_polyline(
        self,
        point_tokens: torch.Tensor,
        point_poses: torch.Tensor,
        token_valid: torch.Tensor,
        frames: torch.Tensor,
        categories: torch.Tensor,
    ) -> torch.Tensor:
        """
        Args:
            point_tokens: [M, P-1, D]
            point_poses: Point frames (position, segment tangent) [M, P-1, 3]
            token_valid: [M, P-1] bool
            frames: Polyline frames [M, 3]
            categories: Polyline categories [M]

        Returns:
            Polyline tokens [M, D]
        """
        query = embedding_lookup(self.polyline_category.weight, categories)[:, None]
        rel = _pairwise_encoding(frames[:, None, None, :], point_poses[:, None, :, :])
        pooled = self.pool(query, point_tokens, rel, token_valid[:, None, :])
        return pooled[:, 0]

    def forward(self, st: SceneTensors) -> MapTokens:
        points = st.map_points
        m = points.shape[0]
        d = self.polyline_category.embedding_dim
        if m == 0:
            return MapTokens(points.new_zeros(0, d), points.new_zeros(0, 3))

        frames = polyline_frame_poses(points)
        point_tokens = self.encode_points(points, st.map_point_categories, frames)
        seg = points[:, 1:] - points[:, :-1]
        point_poses = torch.cat([points[:, :-1], safe_atan2(seg[..., 1], seg[..., 0])[..., None]], dim=-1)
        token_valid = st.map_point_valid[:, :-1] & st.map_point_valid[:, 1:]
        x = self.pool_polyline(point_tokens, point_poses, token_valid, frames, st.map_categories)

        rel = _pairwise_encoding(frames[:, None, :], frames[None, :, :])
        mask = rel[..., 0] <= self.radius
        extra = embedding_lookup(self.relation.weight, st.map_relations)
        for layer in self.layers:
            x = layer(x[None], x[None], rel[None], mask[None], extra[None])[0]
        return MapTokens(x, frames)


def encode_map(encoder: MapEncoder, st: SceneTensors) -> MapTokens:
    return encoder(st)
