"""Likelihoods, winner-take-all regression and mode classification losses."""
import math
from dataclasses import dataclass, fields
from typing import Dict, Optional, Tuple

import torch

import config
from errors import NumericError
from geometry.frames import to_local
from model.donut import StepOutput, UnrollOutput
from model.model_config import DecoderConfig
from model.tokenizer import SubTrajectoryPrediction
from network.gradcheck import stop_gradient
from scene.tensors import SceneTensors

LOG_2PI = math.log(2.0 * math.pi)
SERIES_TERMS = 80
ASYMPTOTIC_TERMS = 20


def laplace_nll(loc: torch.Tensor, scale: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """
    Per-coordinate Laplace negative log-likelihood log(2b) + |t - mu| / b.

    Raises:
        NumericError: If any scale is not strictly positive
    """
    if not bool((scale > 0).all()):
        raise NumericError("laplace_nll: non-positive scale")
    return torch.log(2.0 * scale) + (target - loc).abs() / scale


def log_i0(x: torch.Tensor) -> torch.Tensor:
    """
    log of the modified Bessel function of the first kind, order 0.

    Power series up to BESSEL_SERIES_LIMIT, asymptotic expansion above it.
    """
    limit = config.BESSEL_SERIES_LIMIT
    small = x.clamp(max=limit)
    quarter_sq = (small * 0.5) ** 2
    term = torch.ones_like(small)
    total = torch.ones_like(small)
    for k in range(1, SERIES_TERMS):
        term = term * quarter_sq / (k * k)
        total = total + term
    series = torch.log(total)

    large = x.clamp(min=limit)
    coeff = 1.0
    inv = 1.0 / large
    power = torch.ones_like(large)
    expansion = torch.ones_like(large)
    for k in range(1, ASYMPTOTIC_TERMS):
        coeff *= (2 * k - 1) ** 2 / (8.0 * k)
        power = power * inv
        expansion = expansion + coeff * power
    asymptotic = large - 0.5 * torch.log(2.0 * math.pi * large) + torch.log(expansion)

    return torch.where(x <= limit, series, asymptotic)


def von_mises_nll(loc: torch.Tensor, conc: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """
    von Mises negative log-likelihood log(2 pi I0(kappa)) - kappa cos(t - mu).

    Raises:
        NumericError: If any concentration is not strictly positive
    """
    if not bool((conc > 0).all()):
        raise NumericError("von_mises_nll: non-positive concentration")
    return LOG_2PI + log_i0(conc) - conc * torch.cos(target - loc)


def select_winner(endpoints: torch.Tensor, gt_endpoint: torch.Tensor) -> torch.Tensor:
    """
    Mode whose endpoint is closest to the ground truth; ties go to the lowest k.

    Args:
        endpoints: [..., K, 2]
        gt_endpoint: [..., 2]

    Returns:
        Long tensor [...]
    """
    dist = ((endpoints - gt_endpoint[..., None, :]) ** 2).sum(dim=-1)
    return dist.argmin(dim=-1)


def classification_loss(mode_logits: torch.Tensor, log_likelihood: torch.Tensor) -> torch.Tensor:
    """
    Mixture negative log-likelihood -log sum_k P_k exp(LL_k) per agent.

    Args:
        mode_logits: [N, K]; probabilities are their softmax
        log_likelihood: Joint log-likelihood per mode [N, K]; pass it
            gradient-stopped so only the logits are trained by this term

    Returns:
        Tensor [N]
    """
    if not bool(torch.isfinite(log_likelihood).all()):
        raise NumericError("classification_loss: non-finite log-likelihood")
    log_p = torch.log_softmax(mode_logits, dim=-1)
    return -torch.logsumexp(log_p + log_likelihood, dim=-1)


@dataclass
class LossBreakdown:
    proposal_pos: torch.Tensor
    proposal_hd: torch.Tensor
    refine_pos: torch.Tensor
    refine_hd: torch.Tensor
    over_proposal_pos: torch.Tensor
    over_proposal_hd: torch.Tensor
    over_refine_pos: torch.Tensor
    over_refine_hd: torch.Tensor
    classification: torch.Tensor

    @classmethod
    def component_names(cls) -> Tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @property
    def total(self) -> torch.Tensor:
        return sum(getattr(self, name) for name in self.component_names())

    def as_floats(self) -> Dict[str, float]:
        values = {name: float(getattr(self, name)) for name in self.component_names()}
        values['total'] = float(self.total)
        return values

    def check_finite(self):
        """Raises NumericError naming the first non-finite component."""
        for name in self.component_names():
            if not bool(torch.isfinite(getattr(self, name))):
                raise NumericError(f"non-finite loss component '{name}'")


@dataclass
class SegmentTargets:
    positions: torch.Tensor  # [N, T_sub, 2]
    headings: torch.Tensor   # [N, T_sub]
    valid: torch.Tensor      # [N, T_sub]


def segment_targets(st: SceneTensors, start: int, length: int) -> SegmentTargets:
    """Ground truth for future steps [start, start + length), invalid past T_fut."""
    t0 = st.t_hist + start
    t_end = st.t_hist + st.t_fut
    n = st.num_agents
    positions = st.positions.new_zeros(n, length, 2)
    headings = st.headings.new_zeros(n, length)
    valid = torch.zeros(n, length, dtype=torch.bool)
    stop = min(t0 + length, t_end)
    if stop > t0:
        positions[:, :stop - t0] = st.positions[:, t0:stop]
        headings[:, :stop - t0] = st.headings[:, t0:stop]
        valid[:, :stop - t0] = st.valid[:, t0:stop]
    return SegmentTargets(positions, headings, valid)


def segment_nll(
    loc: torch.Tensor,
    scale: torch.Tensor,
    hd_loc: torch.Tensor,
    hd_conc: torch.Tensor,
    frames: torch.Tensor,
    targets: SegmentTargets,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Position and heading NLL per (agent, [mode,] step) in the prediction's frame.

    Args:
        loc, scale: [N, (K,) T, 2]
        hd_loc, hd_conc: [N, (K,) T]
        frames: [N, (K,) 3]

    Returns:
        Tuple (position NLL summed over coordinates, heading NLL), each [N, (K,) T]
    """
    extra = loc.dim() - 3
    gt_xy = targets.positions.reshape(targets.positions.shape[:1] + (1,) * extra + targets.positions.shape[1:])
    gt_hd = targets.headings.reshape(targets.headings.shape[:1] + (1,) * extra + targets.headings.shape[1:])
    local_xy, local_hd = to_local(gt_xy, gt_hd, frames[..., None, :])
    pos = laplace_nll(loc, scale, local_xy).sum(dim=-1)
    hd = von_mises_nll(hd_loc, hd_conc, local_hd)
    return pos, hd


def _take(x: torch.Tensor, winner: torch.Tensor) -> torch.Tensor:
    return x[torch.arange(x.shape[0]), winner]


def regression_loss(
    prediction: SubTrajectoryPrediction,
    frames: torch.Tensor,
    targets: SegmentTargets,
    over_targets: Optional[SegmentTargets],
    winner: torch.Tensor,
    agent_mask: torch.Tensor,
) -> Dict[str, Tuple[torch.Tensor, torch.Tensor]]:
    """
    Winner-mode NLL sums and target counts for the main and over windows.

    Returns:
        {'pos', 'hd', 'over_pos', 'over_hd'} -> (sum, count)
    """
    frames_w = _take(frames, winner)
    result = {}
    windows = [('', prediction.pos_loc, prediction.pos_scale, prediction.hd_loc, prediction.hd_conc, targets)]
    if over_targets is not None and prediction.over_pos_loc is not None:
        windows.append((
            'over_', prediction.over_pos_loc, prediction.over_pos_scale,
            prediction.over_hd_loc, prediction.over_hd_conc, over_targets,
        ))
    for prefix, loc, scale, hd_loc, hd_conc, tgt in windows:
        pos, hd = segment_nll(
            _take(loc, winner), _take(scale, winner), _take(hd_loc, winner), _take(hd_conc, winner), frames_w, tgt,
        )
        mask = tgt.valid & agent_mask[:, None]
        zero = torch.zeros_like(pos)
        result[prefix + 'pos'] = (torch.where(mask, pos, zero).sum(), mask.sum())
        result[prefix + 'hd'] = (torch.where(mask, hd, zero).sum(), mask.sum())
    return result


def _winners(output: UnrollOutput, st: SceneTensors, cfg: DecoderConfig):
    """Per-step (winner [N], agent mask [N]) pairs."""
    n = st.num_agents
    result = []
    if cfg.winner_mode == "full_horizon":
        t_end = st.t_hist + len(output.steps) * cfg.t_sub - 1
        gt_end = st.positions[:, t_end]
        ok = st.valid[:, t_end]
        winner = select_winner(output.steps[-1].proposal_xy[..., -1, :], gt_end)
        winner = torch.where(ok, winner, torch.zeros(n, dtype=torch.long))
        return [(winner, ok)] * len(output.steps)
    for step in output.steps:
        t_end = st.t_hist + (step.index + 1) * cfg.t_sub - 1
        gt_end = st.positions[:, t_end]
        ok = st.valid[:, t_end]
        winner = select_winner(step.proposal_xy[..., -1, :], gt_end)
        winner = torch.where(ok, winner, torch.zeros(n, dtype=torch.long))
        result.append((winner, ok))
    return result


def future_log_likelihood(output: UnrollOutput, st: SceneTensors, cfg: DecoderConfig) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Joint log-likelihood of the ground-truth future under each mode's final predictions.

    Returns:
        Tuple (LL [N, K], agents with any valid future target [N])
    """
    ll = None
    has_target = torch.zeros(st.num_agents, dtype=torch.bool)
    for step in output.steps:
        targets = segment_targets(st, step.index * cfg.t_sub, cfg.t_sub)
        final = step.final
        pos, hd = segment_nll(final.pos_loc, final.pos_scale, final.hd_loc, final.hd_conc, step.final_frames, targets)
        mask = targets.valid[:, None, :]
        step_ll = -torch.where(mask, pos + hd, torch.zeros_like(pos)).sum(dim=-1)
        ll = step_ll if ll is None else ll + step_ll
        has_target = has_target | targets.valid.any(dim=-1)
    return ll, has_target


def compute_scene_loss(output: UnrollOutput, st: SceneTensors, cfg: DecoderConfig) -> LossBreakdown:
    """
    All nine loss components of one unrolled scene.

    Regression components are NLL sums over valid (agent, time) targets of
    the winner mode divided by the number of such targets; the
    classification component is averaged over agents with a valid future.
    """
    st = st.to(output.forecast.trajectories.dtype)
    sums = {name: [] for name in LossBreakdown.component_names()}
    counts = {name: 0 for name in LossBreakdown.component_names()}

    def add(name, value):
        sums[name].append(value[0])
        counts[name] += int(value[1])

    for step, (winner, ok) in zip(output.steps, _winners(output, st, cfg)):
        targets = segment_targets(st, step.index * cfg.t_sub, cfg.t_sub)
        over_targets = segment_targets(st, (step.index + 1) * cfg.t_sub, cfg.t_sub) if cfg.use_overprediction else None

        proposal = regression_loss(step.proposal, step.proposal_frames, targets, over_targets, winner, ok)
        add('proposal_pos', proposal['pos'])
        add('proposal_hd', proposal['hd'])
        if 'over_pos' in proposal:
            add('over_proposal_pos', proposal['over_pos'])
            add('over_proposal_hd', proposal['over_hd'])

        if step.refined is not None:
            refined = regression_loss(step.refined, step.refined_frames, targets, over_targets, winner, ok)
            add('refine_pos', refined['pos'])
            add('refine_hd', refined['hd'])
            if 'over_pos' in refined:
                add('over_refine_pos', refined['over_pos'])
                add('over_refine_hd', refined['over_hd'])

    zero = output.mode_logits.new_zeros(())
    values = {}
    for name in LossBreakdown.component_names():
        if name == 'classification':
            continue
        total = sum(sums[name], zero)
        values[name] = total / max(counts[name], 1)

    ll, has_target = future_log_likelihood(output, st, cfg)
    per_agent = classification_loss(output.mode_logits, stop_gradient(ll))
    values['classification'] = torch.where(has_target, per_agent, torch.zeros_like(per_agent)).sum() / max(
        int(has_target.sum()), 1
    )
    return LossBreakdown(**values)


def min_scale(output: UnrollOutput) -> float:
    """Smallest emitted scale or concentration across all steps."""
    lowest = math.inf
    for step in output.steps:
        for pred in (step.proposal, step.refined):
            if pred is None:
                continue
            for value in (pred.pos_scale, pred.hd_conc, pred.over_pos_scale, pred.over_hd_conc):
                if value is not None:
                    lowest = min(lowest, float(value.min()))
    return lowest
