"""
Factorized attention over agent sub-trajectory tokens.

Tokens are laid out as [S, N, K, D]: S segments decoded together (all history
segments during the bootstrap, one segment afterwards), N agents, K modes.
Each block applies temporal, map, social and mode attention in that order.
"""
from dataclasses import dataclass, field
from typing import List, Optional

import torch
import torch.nn as nn

from geometry.frames import DESCRIPTOR_INPUT_DIM, closest_points, descriptor_encoding_input, relative_pose_features
from model.map_encoder import MapTokens
from model.model_config import DecoderConfig
from network.attention import RelAttentionLayer
from scene.tensors import SceneTensors


@dataclass
class TokenCache:
    """
    Tokens of earlier decoder steps, one tensor per attention round.

    `tokens[r]` holds the inputs of round r of the temporal attention, so the
    keys seen at round r of a new step are what round r saw before.
    """
    num_rounds: int
    tokens: List[Optional[torch.Tensor]] = field(default_factory=list)  # per round [C, N, K, D]
    frames: Optional[torch.Tensor] = None  # [C, N, K, 3]
    times: Optional[torch.Tensor] = None   # [C] long
    valid: Optional[torch.Tensor] = None   # [C, N] bool

    def __post_init__(self):
        if not self.tokens:
            self.tokens = [None] * self.num_rounds

    def __len__(self) -> int:
        return 0 if self.frames is None else self.frames.shape[0]

    def append(self, round_inputs: List[torch.Tensor], frames: torch.Tensor, times: torch.Tensor, valid: torch.Tensor):
        """Adds S new steps; every argument has a leading segment axis."""
        def cat(old, new):
            return new if old is None else torch.cat([old, new], dim=0)

        self.tokens = [cat(old, new) for old, new in zip(self.tokens, round_inputs)]
        self.frames = cat(self.frames, frames)
        self.times = cat(self.times, times)
        self.valid = cat(self.valid, valid)

    def duplicate_modes(self, num_modes: int):
        """Expands a unimodal cache to K identical modes."""
        if len(self) == 0:
            return
        if self.frames.shape[2] != 1:
            raise ValueError(f"cache already holds {self.frames.shape[2]} modes")
        self.tokens = [t.expand(-1, -1, num_modes, -1) for t in self.tokens]
        self.frames = self.frames.expand(-1, -1, num_modes, -1)


@dataclass
class SceneContext:
    """Per-scene inputs shared by every decoder step."""
    map_tokens: MapTokens
    map_points: torch.Tensor      # [M, P, 2]
    map_point_valid: torch.Tensor  # [M, P]
    agent_types: torch.Tensor     # [N]

    @classmethod
    def build(cls, st: SceneTensors, map_tokens: MapTokens) -> "SceneContext":
        return cls(map_tokens, st.map_points, st.map_point_valid, st.agent_types)


def _encode(src: torch.Tensor, src_t: torch.Tensor, dst: torch.Tensor, dst_t: torch.Tensor) -> torch.Tensor:
    return descriptor_encoding_input(relative_pose_features(src, src_t, dst, dst_t))


class FactoredBlock(nn.Module):
    """One round of temporal, map, social and mode attention."""

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        d, h, b = cfg.embed_dim, cfg.num_heads, cfg.num_freq_bands
        self.radius = cfg.radius
        self.line_attention = cfg.line_attention
        map_rel_dim = 2 * DESCRIPTOR_INPUT_DIM if cfg.line_attention else DESCRIPTOR_INPUT_DIM
        self.temporal = RelAttentionLayer(d, h, b, dropout=cfg.dropout)
        self.map = RelAttentionLayer(d, h, b, rel_dim=map_rel_dim, dropout=cfg.dropout)
        self.social = RelAttentionLayer(d, h, b, dropout=cfg.dropout)
        self.mode = RelAttentionLayer(d, h, b, dropout=cfg.dropout)

    def temporal_attention(
        self,
        x: torch.Tensor,
        frames: torch.Tensor,
        times: torch.Tensor,
        valid: torch.Tensor,
        cache_tokens: Optional[torch.Tensor],
        cache: TokenCache,
    ) -> torch.Tensor:
        s, n, k, d = x.shape
        if cache_tokens is not None and len(cache) > 0:
            keys = torch.cat([cache_tokens, x], dim=0)
            key_frames = torch.cat([cache.frames, frames], dim=0)
            key_times = torch.cat([cache.times, times], dim=0)
            key_valid = torch.cat([cache.valid, valid], dim=0)
            num_cached = len(cache)
        else:
            keys, key_frames, key_times, key_valid, num_cached = x, frames, times, valid, 0
        c = keys.shape[0]

        # [N, K, S, C, ...]
        q_frames = frames.permute(1, 2, 0, 3)[:, :, :, None, :]
        k_frames = key_frames.permute(1, 2, 0, 3)[:, :, None, :, :]
        rel = _encode(q_frames, times[:, None], k_frames, key_times[None, :])

        q_order = torch.arange(s) + num_cached
        k_order = torch.arange(c)
        earlier = k_order[None, :] < q_order[:, None]                        # [S, C]
        mask = earlier[None] & valid.t()[:, :, None] & key_valid.t()[:, None, :]  # [N, S, C]
        mask = mask[:, None].expand(n, k, s, c)

        queries = x.permute(1, 2, 0, 3).reshape(n * k, s, d)
        kv = keys.permute(1, 2, 0, 3).reshape(n * k, c, d)
        out = self.temporal(queries, kv, rel.reshape(n * k, s, c, -1), mask.reshape(n * k, s, c))
        return out.reshape(n, k, s, d).permute(2, 0, 1, 3)

    def map_attention(self, x: torch.Tensor, frames: torch.Tensor, valid: torch.Tensor, ctx: SceneContext) -> torch.Tensor:
        s, n, k, d = x.shape
        map_tokens = ctx.map_tokens
        m = map_tokens.num_polylines
        if m == 0:
            return x
        q_frames = frames.reshape(s, n * k, 1, 3)
        zero = torch.zeros((), dtype=torch.long)
        descriptor = relative_pose_features(q_frames, zero, map_tokens.frames[None, None], zero)  # [S, NK, M, 4]
        reach = descriptor[..., 0]
        rel = descriptor_encoding_input(descriptor)
        if self.line_attention:
            xy, tangent, dist = closest_points(q_frames.reshape(-1, 3)[:, :2], ctx.map_points, ctx.map_point_valid)
            closest = torch.cat([xy, tangent[..., None]], dim=-1).reshape(s, n * k, m, 3)
            line_rel = _encode(q_frames, zero, closest, zero)
            rel = torch.cat([rel, line_rel], dim=-1)
            reach = torch.minimum(reach, dist.reshape(s, n * k, m))
        q_valid = valid[:, :, None].expand(s, n, k).reshape(s, n * k)
        mask = (reach <= self.radius) & q_valid[..., None]
        keys = map_tokens.tokens[None].expand(s, -1, -1)
        out = self.map(x.reshape(s, n * k, d), keys, rel, mask)
        return out.reshape(s, n, k, d)

    def social_attention(self, x: torch.Tensor, frames: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        s, n, k, d = x.shape
        f = frames.permute(0, 2, 1, 3)  # [S, K, N, 3]
        zero = torch.zeros((), dtype=torch.long)
        descriptor = relative_pose_features(f[:, :, :, None, :], zero, f[:, :, None, :, :], zero)  # [S, K, N, N, 4]
        rel = descriptor_encoding_input(descriptor)
        others = ~torch.eye(n, dtype=torch.bool)
        pair_valid = valid[:, :, None] & valid[:, None, :]  # [S, N, N]
        mask = (descriptor[..., 0] <= self.radius) & others & pair_valid[:, None]
        tokens = x.permute(0, 2, 1, 3).reshape(s * k, n, d)
        out = self.social(tokens, tokens, rel.reshape(s * k, n, n, -1), mask.reshape(s * k, n, n))
        return out.reshape(s, k, n, d).permute(0, 2, 1, 3)

    def mode_attention(
        self,
        x: torch.Tensor,
        frames: torch.Tensor,
        valid: torch.Tensor,
        mode_context: Optional[torch.Tensor],
    ) -> torch.Tensor:
        s, n, k, d = x.shape
        if mode_context is not None:
            x = x + mode_context
        zero = torch.zeros((), dtype=torch.long)
        rel = _encode(frames[:, :, :, None, :], zero, frames[:, :, None, :, :], zero)  # [S, N, K, K, 6]
        mask = valid[:, :, None, None].expand(s, n, k, k)
        out = self.mode(x.reshape(s * n, k, d), x.reshape(s * n, k, d), rel.reshape(s * n, k, k, -1), mask.reshape(s * n, k, k))
        return out.reshape(s, n, k, d)

    def forward(
        self,
        x: torch.Tensor,
        frames: torch.Tensor,
        times: torch.Tensor,
        valid: torch.Tensor,
        cache_tokens: Optional[torch.Tensor],
        cache: TokenCache,
        ctx: SceneContext,
        mode_context: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """
        Args:
            x: Tokens [S, N, K, D]
            frames: Reference poses [S, N, K, 3]
            times: Time index of each segment's reference pose [S]
            valid: Token validity [S, N]
            cache_tokens: This round's cached keys [C, N, K, D] (or None)
            cache: Cache holding frames/times/validity of the cached keys
            ctx: Map tokens and agent types of the scene
            mode_context: Mode plus time embedding added before mode attention [K, D]

        Returns:
            Tokens [S, N, K, D]
        """
        x = self.temporal_attention(x, frames, times, valid, cache_tokens, cache)
        x = self.map_attention(x, frames, valid, ctx)
        x = self.social_attention(x, frames, valid)
        return self.mode_attention(x, frames, valid, mode_context)


def factored_block(
    block: FactoredBlock,
    tokens: torch.Tensor,
    frames: torch.Tensor,
    times: torch.Tensor,
    valid: torch.Tensor,
    cache: TokenCache,
    round_index: int,
    ctx: SceneContext,
    mode_context: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Runs one round against the matching cache entries."""
    if len(cache) > 0 and cache.frames.shape[1:3] != frames.shape[1:3]:
        raise ValueError(
            f"cache holds {tuple(cache.frames.shape[1:3])} agents/modes, tokens have {tuple(frames.shape[1:3])}"
        )
    return block(tokens, frames, times, valid, cache.tokens[round_index], cache, ctx, mode_context)
