"""Sub-trajectory tokenizer and detokenizer heads."""
from dataclasses import dataclass, replace
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

import config
from errors import NumericError
from geometry.frames import rotate, safe_atan2, safe_norm, to_local, wrap_angle
from model.model_config import DecoderConfig
from network.layers import MLP, FourierEmbedding, embedding_lookup
from scene.scene_types import AgentType

NUM_STEP_FEATURES = 8
# loc x, loc y, scale x, scale y, heading loc, heading concentration
_STEP_OUTPUTS = 6


def subtrajectory_features(
    positions: torch.Tensor,
    headings: torch.Tensor,
    valid: torch.Tensor,
    frames: torch.Tensor,
) -> torch.Tensor:
    """
    Per-step kinematic features of a segment in its reference frame.

    Features: local x, local y, local heading, motion dx, motion dy, heading
    change, speed, heading minus motion direction. Motion of step 0 copies
    step 1; steps whose motion needs an invalid state get zero motion.
    Invalid steps are all zero.

    Args:
        positions: Global positions [..., T_sub, 2]
        headings: Global headings [..., T_sub]
        valid: Validity [..., T_sub] bool
        frames: Reference poses [..., 3]

    Returns:
        Tensor [..., T_sub, 8]
    """
    local_xy, local_hd = to_local(positions, headings, frames[..., None, :])
    if positions.shape[-2] > 1:
        motion = local_xy[..., 1:, :] - local_xy[..., :-1, :]
        turn = wrap_angle(local_hd[..., 1:] - local_hd[..., :-1])
        pair_valid = valid[..., 1:] & valid[..., :-1]
        motion = torch.cat([motion[..., :1, :], motion], dim=-2)
        turn = torch.cat([turn[..., :1], turn], dim=-1)
        pair_valid = torch.cat([pair_valid[..., :1], pair_valid], dim=-1)
        motion = motion * pair_valid[..., None].to(motion.dtype)
        turn = turn * pair_valid.to(turn.dtype)
    else:
        motion = torch.zeros_like(local_xy)
        turn = torch.zeros_like(local_hd)

    speed = safe_norm(motion) / config.STEP_SECONDS
    slip = wrap_angle(local_hd - safe_atan2(motion[..., 1], motion[..., 0]))
    feats = torch.cat([
        local_xy,
        local_hd[..., None],
        motion,
        turn[..., None],
        speed[..., None],
        slip[..., None],
    ], dim=-1)
    return feats * valid[..., None].to(feats.dtype)


class SubTrajectoryTokenizer(nn.Module):
    """Segment of T_sub states -> one D-dimensional token."""

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        d = cfg.embed_dim
        self.t_sub = cfg.t_sub
        self.step_embed = FourierEmbedding(NUM_STEP_FEATURES, d, cfg.num_freq_bands, dropout=cfg.dropout)
        self.merge = MLP((cfg.t_sub * d, d, d), dropout=cfg.dropout)
        self.agent_type = nn.Embedding(len(AgentType), d)

    def forward(
        self,
        positions: torch.Tensor,
        headings: torch.Tensor,
        valid: torch.Tensor,
        frames: torch.Tensor,
        agent_types: torch.Tensor,
    ) -> torch.Tensor:
        """
        Args:
            positions: [..., T_sub, 2]
            headings: [..., T_sub]
            valid: [..., T_sub]
            frames: [..., 3]
            agent_types: Type indices broadcastable to the leading shape

        Returns:
            Tokens [..., D]
        """
        if positions.shape[-2] != self.t_sub:
            raise ValueError(f"segment length {positions.shape[-2]} does not match t_sub={self.t_sub}")
        feats = subtrajectory_features(positions, headings, valid, frames)
        steps = self.step_embed(feats)
        token = self.merge(steps.flatten(start_dim=-2))
        return token + embedding_lookup(self.agent_type.weight, agent_types)


@dataclass
class SubTrajectoryPrediction:
    """
    Distribution parameters of one predicted segment and its overprediction,
    in a local frame. Leading shape is [..., N, K].
    """
    pos_loc: torch.Tensor      # [..., T_sub, 2]
    pos_scale: torch.Tensor    # [..., T_sub, 2]
    hd_loc: torch.Tensor       # [..., T_sub]
    hd_conc: torch.Tensor      # [..., T_sub]
    over_pos_loc: Optional[torch.Tensor]
    over_pos_scale: Optional[torch.Tensor]
    over_hd_loc: Optional[torch.Tensor]
    over_hd_conc: Optional[torch.Tensor]
    mode_logit: torch.Tensor   # [...]

    def without_over(self) -> "SubTrajectoryPrediction":
        return replace(self, over_pos_loc=None, over_pos_scale=None, over_hd_loc=None, over_hd_conc=None)


class Detokenizer(nn.Module):
    """Tokens -> segment and overprediction distributions plus a mode logit."""

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        d = cfg.embed_dim
        self.t_sub = cfg.t_sub
        self.head = MLP((d, d, 2 * _STEP_OUTPUTS * cfg.t_sub), dropout=cfg.dropout)
        self.logit_head = MLP((d, d, 1), dropout=cfg.dropout)

    def forward(self, tokens: torch.Tensor) -> SubTrajectoryPrediction:
        raw = self.head(tokens)
        logit = self.logit_head(tokens)[..., 0]
        if not bool(torch.isfinite(raw).all()) or not bool(torch.isfinite(logit).all()):
            raise NumericError("detokenize: non-finite head output")
        raw = raw.unflatten(-1, (2, self.t_sub, _STEP_OUTPUTS))
        main, over = raw.unbind(dim=-3)

        def split(block):
            loc = block[..., 0:2]
            scale = F.softplus(block[..., 2:4]) + config.MIN_SCALE
            hd_loc = block[..., 4]
            conc = F.softplus(block[..., 5]) + config.MIN_SCALE
            return loc, scale, hd_loc, conc

        loc, scale, hd_loc, conc = split(main)
        o_loc, o_scale, o_hd_loc, o_conc = split(over)
        return SubTrajectoryPrediction(loc, scale, hd_loc, conc, o_loc, o_scale, o_hd_loc, o_conc, logit)


def detokenize(head: Detokenizer, tokens: torch.Tensor) -> SubTrajectoryPrediction:
    return head(tokens)


def tokenize_subtrajectory(
    tokenizer: SubTrajectoryTokenizer,
    positions: torch.Tensor,
    headings: torch.Tensor,
    frame: torch.Tensor,
    agent_type: int,
    valid: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Single-segment convenience wrapper: [T_sub, 2] states -> [D]."""
    if valid is None:
        valid = torch.ones(positions.shape[:-1], dtype=torch.bool)
    return tokenizer(positions, headings, valid, frame, torch.tensor(agent_type, dtype=torch.long))
