"""Decoder-only autoregressive forecaster: history bootstrap, proposer/refiner unroll."""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import torch
import torch.nn as nn

from errors import ConfigError
from geometry.frames import to_global, to_local, wrap_angle
from model.factored_attention import FactoredBlock, SceneContext, TokenCache, factored_block
from model.map_encoder import MapEncoder
from model.model_config import DecoderConfig
from model.tokenizer import Detokenizer, SubTrajectoryPrediction, SubTrajectoryTokenizer
from network.gradcheck import stop_gradient
from network.layers import embedding_lookup, init_weights
from scene.tensors import SceneTensors

logger = logging.getLogger(__name__)


@dataclass
class Forecast:
    trajectories: torch.Tensor   # [N, K, T_fut, 3] global x, y, heading
    probabilities: torch.Tensor  # [N, K]


@dataclass
class HistorySegments:
    positions: torch.Tensor  # [S_h, N, T_sub, 2]
    headings: torch.Tensor   # [S_h, N, T_sub]
    valid: torch.Tensor      # [S_h, N, T_sub]
    frames: torch.Tensor     # [S_h, N, 3]
    times: torch.Tensor      # [S_h]
    token_valid: torch.Tensor  # [S_h, N]
    active: torch.Tensor     # [N] agent has any valid history state


@dataclass
class BootstrapState:
    history: HistorySegments
    proposer_cache: TokenCache
    refiner_cache: Optional[TokenCache]
    proposer_tokens: torch.Tensor            # [S_h, N, 1, D]
    refiner_tokens: Optional[torch.Tensor]


@dataclass
class StepOutput:
    """One decoder step. Predictions are local to their frames."""
    index: int
    proposal: SubTrajectoryPrediction
    proposal_frames: torch.Tensor     # [N, K, 3]
    proposal_xy: torch.Tensor         # [N, K, T_sub, 2] global, gradient-stopped
    refined: Optional[SubTrajectoryPrediction] = None
    refined_frames: Optional[torch.Tensor] = None

    @property
    def final(self) -> SubTrajectoryPrediction:
        return self.refined if self.refined is not None else self.proposal

    @property
    def final_frames(self) -> torch.Tensor:
        return self.refined_frames if self.refined is not None else self.proposal_frames


@dataclass
class UnrollOutput:
    forecast: Forecast
    mode_logits: torch.Tensor  # [N, K] from the last step
    steps: List[StepOutput] = field(default_factory=list)
    proposer_cache: Optional[TokenCache] = None
    refiner_cache: Optional[TokenCache] = None


class DecoderModule(nn.Module):
    """Tokenizer, factored attention rounds and detokenizer of one pass (proposer or refiner)."""

    def __init__(self, cfg: DecoderConfig, refiner: bool = False):
        super().__init__()
        d = cfg.embed_dim
        self.tokenizer = SubTrajectoryTokenizer(cfg)
        self.blocks = nn.ModuleList([FactoredBlock(cfg) for _ in range(cfg.rounds)])
        self.detokenizer = Detokenizer(cfg)
        self.mode_embed = nn.Embedding(cfg.num_modes, d)
        self.time_embed = nn.Embedding(cfg.future_steps, d)
        self.proposer_proj = nn.Linear(d, d) if refiner else None

    def reset_mode_embeddings(self):
        nn.init.zeros_(self.mode_embed.weight)
        nn.init.zeros_(self.time_embed.weight)

    def new_cache(self) -> TokenCache:
        return TokenCache(len(self.blocks))

    def run(
        self,
        x: torch.Tensor,
        frames: torch.Tensor,
        times: torch.Tensor,
        valid: torch.Tensor,
        cache: TokenCache,
        ctx: SceneContext,
        mode_step: Optional[int] = None,
    ) -> torch.Tensor:
        """Applies every round and appends the round inputs to the cache."""
        mode_context = None
        if mode_step is not None:
            step = torch.tensor(mode_step, dtype=torch.long)
            mode_context = self.mode_embed.weight + embedding_lookup(self.time_embed.weight, step)
        round_inputs = []
        for r, block in enumerate(self.blocks):
            round_inputs.append(x)
            x = factored_block(block, x, frames, times, valid, cache, r, ctx, mode_context)
        cache.append(round_inputs, frames, times, valid)
        return x


class DonutForecaster(nn.Module):
    """
    Map encoder plus proposer and refiner decoder modules.

    Each future decoder step proposes the next T_sub states from the previous
    segment, moves the reference point to the proposal endpoint and refines
    the proposal with additive offsets. The refined segment is the input of
    the next step.
    """

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.map_encoder = MapEncoder(cfg)
        self.proposer = DecoderModule(cfg)
        self.refiner = DecoderModule(cfg, refiner=True) if cfg.use_refinement else None
        self.apply(init_weights)
        for module in (self.proposer, self.refiner):
            if module is not None:
                module.reset_mode_embeddings()

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def _check_scene(self, st: SceneTensors):
        if st.t_hist != self.cfg.t_hist or st.t_fut < self.cfg.t_fut:
            raise ConfigError(
                f"scene horizons t_hist={st.t_hist}, t_fut={st.t_fut} do not match decoder "
                f"t_hist={self.cfg.t_hist}, t_fut={self.cfg.t_fut}"
            )

    def scene_context(self, st: SceneTensors) -> SceneContext:
        return SceneContext.build(st, self.map_encoder(st))

    def history_segments(self, st: SceneTensors) -> HistorySegments:
        """Splits the observed history into T_sub-step segments with endpoint frames."""
        cfg = self.cfg
        n, s_h, t_sub = st.num_agents, cfg.history_steps, cfg.t_sub
        pos = st.positions[:, :cfg.t_hist]
        hd = st.headings[:, :cfg.t_hist]
        valid = st.valid[:, :cfg.t_hist]

        idx = torch.arange(cfg.t_hist).expand(n, -1)
        last_valid = torch.where(valid, idx, torch.full_like(idx, -1)).cummax(dim=1).values
        first_valid = valid.to(torch.long).argmax(dim=1)
        ends = torch.arange(s_h) * t_sub + t_sub - 1
        frame_idx = last_valid[:, ends]  # [N, S_h]
        frame_idx = torch.where(frame_idx >= 0, frame_idx, first_valid[:, None])
        frame_xy = pos.gather(1, frame_idx[..., None].expand(-1, -1, 2))
        frame_hd = hd.gather(1, frame_idx)
        frames = torch.cat([frame_xy, frame_hd[..., None]], dim=-1).transpose(0, 1)

        seg_valid = valid.reshape(n, s_h, t_sub).transpose(0, 1)
        return HistorySegments(
            positions=pos.reshape(n, s_h, t_sub, 2).transpose(0, 1),
            headings=hd.reshape(n, s_h, t_sub).transpose(0, 1),
            valid=seg_valid,
            frames=frames,
            times=ends,
            token_valid=seg_valid.any(dim=-1),
            active=valid.any(dim=1),
        )

    def bootstrap_history(self, st: SceneTensors, ctx: SceneContext) -> BootstrapState:
        """
        Runs both modules unimodally over all history segments in one causal
        pass, then duplicates the caches along the mode axis.
        """
        hist = self.history_segments(st)
        types = ctx.agent_types[None, :, None]
        pos = hist.positions[:, :, None]
        hd = hist.headings[:, :, None]
        valid = hist.valid[:, :, None]
        frames = hist.frames[:, :, None]

        proposer_cache = self.proposer.new_cache()
        x = self.proposer.tokenizer(pos, hd, valid, frames, types)
        proposer_tokens = self.proposer.run(x, frames, hist.times, hist.token_valid, proposer_cache, ctx)
        proposer_cache.duplicate_modes(self.cfg.num_modes)

        refiner_cache, refiner_tokens = None, None
        if self.refiner is not None:
            refiner_cache = self.refiner.new_cache()
            x = self.refiner.tokenizer(pos, hd, valid, frames, types) + self.refiner.proposer_proj(proposer_tokens)
            refiner_tokens = self.refiner.run(x, frames, hist.times, hist.token_valid, refiner_cache, ctx)
            refiner_cache.duplicate_modes(self.cfg.num_modes)
        return BootstrapState(hist, proposer_cache, refiner_cache, proposer_tokens, refiner_tokens)

    def propose_step(
        self,
        prev_xy: torch.Tensor,
        prev_hd: torch.Tensor,
        prev_valid: torch.Tensor,
        prev_frames: torch.Tensor,
        time_index: int,
        active: torch.Tensor,
        cache: TokenCache,
        ctx: SceneContext,
        step: int,
    ):
        """
        Tokenizes the previous segment in its endpoint frame and predicts the next one.

        Returns:
            Tuple (proposal in the `prev_frames` frames, proposer tokens [N, K, D])
        """
        types = ctx.agent_types[:, None]
        x = self.proposer.tokenizer(prev_xy, prev_hd, prev_valid, prev_frames, types)
        times = torch.tensor([time_index], dtype=torch.long)
        tokens = self.proposer.run(x[None], prev_frames[None], times, active[None], cache, ctx, step)[0]
        return self.proposer.detokenizer(tokens), tokens

    def refine_step(
        self,
        proposal: SubTrajectoryPrediction,
        proposal_frames: torch.Tensor,
        proposal_xy: torch.Tensor,
        proposal_hd: torch.Tensor,
        proposer_tokens: torch.Tensor,
        time_index: int,
        active: torch.Tensor,
        cache: TokenCache,
        ctx: SceneContext,
        step: int,
    ):
        """
        Moves the reference point to the proposal endpoint and predicts offsets.

        Args:
            proposal: Proposer output (local to `proposal_frames`)
            proposal_frames: [N, K, 3]
            proposal_xy, proposal_hd: Gradient-stopped global proposal [N, K, T_sub, (2)]
            proposer_tokens: [N, K, D]

        Returns:
            Tuple (refined prediction local to the new frames, new frames [N, K, 3], refiner tokens)
        """
        types = ctx.agent_types[:, None]
        frames = torch.cat([proposal_xy[..., -1, :], wrap_angle(proposal_hd[..., -1:])], dim=-1)
        valid = torch.ones(proposal_hd.shape, dtype=torch.bool)
        x = self.refiner.tokenizer(proposal_xy, proposal_hd, valid, frames, types)
        x = x + self.refiner.proposer_proj(proposer_tokens)
        times = torch.tensor([time_index], dtype=torch.long)
        tokens = self.refiner.run(x[None], frames[None], times, active[None], cache, ctx, step)[0]
        offsets = self.refiner.detokenizer(tokens)

        base_xy, base_hd = to_local(proposal_xy, proposal_hd, frames[..., None, :])
        over_xy, over_hd = to_global(proposal.over_pos_loc, proposal.over_hd_loc, proposal_frames[..., None, :])
        over_xy, over_hd = stop_gradient(over_xy), stop_gradient(over_hd)
        over_base_xy, over_base_hd = to_local(over_xy, over_hd, frames[..., None, :])

        refined = SubTrajectoryPrediction(
            pos_loc=base_xy + offsets.pos_loc,
            pos_scale=offsets.pos_scale,
            hd_loc=base_hd + offsets.hd_loc,
            hd_conc=offsets.hd_conc,
            over_pos_loc=over_base_xy + offsets.over_pos_loc,
            over_pos_scale=offsets.over_pos_scale,
            over_hd_loc=over_base_hd + offsets.over_hd_loc,
            over_hd_conc=offsets.over_hd_conc,
            mode_logit=offsets.mode_logit,
        )
        return refined, frames, tokens

    def unroll_future(self, st: SceneTensors, training: bool = False) -> UnrollOutput:
        """
        Bootstraps on the history and decodes T_fut / T_sub future segments.

        Only states with t < t_hist are read. Proposals feeding the refiner and
        refined segments feeding the next step are gradient-stopped.

        Args:
            st: Scene tensors
            training: Keep overprediction parameters in the returned steps

        Returns:
            UnrollOutput with the global Forecast and per-step predictions
        """
        cfg = self.cfg
        st = st.to(self.dtype)
        self._check_scene(st)
        ctx = self.scene_context(st)
        boot = self.bootstrap_history(st, ctx)
        hist = boot.history

        n, k, t_sub = st.num_agents, cfg.num_modes, cfg.t_sub
        prev_xy = hist.positions[-1][:, None].expand(n, k, t_sub, 2)
        prev_hd = hist.headings[-1][:, None].expand(n, k, t_sub)
        prev_valid = hist.valid[-1][:, None].expand(n, k, t_sub)
        prev_frames = hist.frames[-1][:, None].expand(n, k, 3)

        steps: List[StepOutput] = []
        pieces = []
        logits = None
        for f in range(cfg.future_steps):
            time_index = cfg.t_hist + f * t_sub - 1
            proposal, proposer_tokens = self.propose_step(
                prev_xy, prev_hd, prev_valid, prev_frames, time_index, hist.active, boot.proposer_cache, ctx, f,
            )
            prop_xy, prop_hd = to_global(proposal.pos_loc, proposal.hd_loc, prev_frames[..., None, :])
            prop_xy, prop_hd = stop_gradient(prop_xy), stop_gradient(prop_hd)
            step = StepOutput(f, proposal, prev_frames, prop_xy)

            if self.refiner is not None:
                refined, ref_frames, _ = self.refine_step(
                    proposal, prev_frames, prop_xy, prop_hd, proposer_tokens,
                    time_index + t_sub, hist.active, boot.refiner_cache, ctx, f,
                )
                step.refined, step.refined_frames = refined, ref_frames

            out_xy, out_hd = to_global(step.final.pos_loc, step.final.hd_loc, step.final_frames[..., None, :])
            out_xy, out_hd = stop_gradient(out_xy), wrap_angle(stop_gradient(out_hd))
            pieces.append(torch.cat([out_xy, out_hd[..., None]], dim=-1))
            logits = step.final.mode_logit

            prev_xy, prev_hd = out_xy, out_hd
            prev_valid = torch.ones(out_hd.shape, dtype=torch.bool)
            prev_frames = torch.cat([out_xy[..., -1, :], out_hd[..., -1:]], dim=-1)

            if not training:
                step.proposal = step.proposal.without_over()
                if step.refined is not None:
                    step.refined = step.refined.without_over()
            steps.append(step)

        trajectories = torch.cat(pieces, dim=2)
        forecast = Forecast(trajectories, torch.softmax(logits, dim=-1))
        return UnrollOutput(forecast, logits, steps, boot.proposer_cache, boot.refiner_cache)

    def forward(self, st: SceneTensors, training: bool = False) -> UnrollOutput:
        return self.unroll_future(st, training=training)

    @torch.no_grad()
    def predict(self, st: SceneTensors) -> Forecast:
        """Inference-mode forecast (dropout off, no gradients)."""
        was_training = self.training
        self.eval()
        try:
            return self.unroll_future(st, training=False).forecast
        finally:
            self.train(was_training)
