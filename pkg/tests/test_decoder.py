import copy
import math
from dataclasses import replace

import pytest
import torch

from errors import ConfigError
from geometry.frames import to_global, wrap_angle
from model.donut import DonutForecaster
from model.factored_attention import factored_block
from model.tokenizer import tokenize_subtrajectory
from network.gradcheck import grad_check
from scene.generator import GeneratorConfig, generate_synthetic_scene, transform_scene
from scene.scene_io import scene_from_dict
from scene.tensors import scene_to_tensors
from training.losses import compute_scene_loss


def test_forecast_shapes_and_probabilities(tiny_model, tiny_tensors, tiny_decoder_cfg):
    forecast = tiny_model.predict(tiny_tensors)

    n, k = tiny_tensors.num_agents, tiny_decoder_cfg.num_modes
    assert forecast.trajectories.shape == (n, k, tiny_decoder_cfg.t_fut, 3)
    assert forecast.probabilities.shape == (n, k)
    assert torch.allclose(forecast.probabilities.sum(dim=-1), torch.ones(n, dtype=torch.float64))
    assert torch.isfinite(forecast.trajectories).all()


def test_modes_are_identical_at_initialization(tiny_model, tiny_tensors, tiny_decoder_cfg):
    forecast = tiny_model.predict(tiny_tensors)

    first = forecast.trajectories[:, :1]
    assert torch.allclose(forecast.trajectories, first.expand_as(forecast.trajectories), atol=1e-10)
    uniform = torch.full_like(forecast.probabilities, 1.0 / tiny_decoder_cfg.num_modes)
    assert torch.allclose(forecast.probabilities, uniform)


def test_caches_hold_history_and_future_steps(tiny_model, tiny_tensors, tiny_decoder_cfg):
    output = tiny_model.unroll_future(tiny_tensors)

    expected = tiny_decoder_cfg.history_steps + tiny_decoder_cfg.future_steps
    assert len(output.proposer_cache) == expected == 6
    assert len(output.refiner_cache) == expected
    assert len(output.steps) == tiny_decoder_cfg.future_steps
    assert output.proposer_cache.frames.shape[:3] == (6, tiny_tensors.num_agents, tiny_decoder_cfg.num_modes)


def test_forecast_ignores_ground_truth_future(tiny_model, tiny_tensors):
    n, t_fut = tiny_tensors.num_agents, tiny_tensors.t_fut
    generator = torch.Generator().manual_seed(4)
    scrambled = tiny_tensors.with_future(
        torch.randn(n, t_fut, 2, generator=generator, dtype=torch.float64) * 50.0,
        torch.rand(n, t_fut, generator=generator, dtype=torch.float64) * 6.0 - 3.0,
    )

    before = tiny_model.predict(tiny_tensors)
    after = tiny_model.predict(scrambled)

    assert torch.equal(before.trajectories, after.trajectories)
    assert torch.equal(before.probabilities, after.probabilities)


def test_forecast_moves_with_the_scene(tiny_model, tiny_scene):
    angle, shift = 0.9, (30.0, -20.0)
    moved = transform_scene(tiny_scene, angle, shift)

    before = tiny_model.predict(scene_to_tensors(tiny_scene, dtype=torch.float64))
    after = tiny_model.predict(scene_to_tensors(moved, dtype=torch.float64))

    c, s = math.cos(angle), math.sin(angle)
    rot = torch.tensor([[c, -s], [s, c]], dtype=torch.float64)
    expected_xy = before.trajectories[..., :2] @ rot.T + torch.tensor(shift, dtype=torch.float64)
    assert torch.allclose(after.trajectories[..., :2], expected_xy, atol=1e-6)
    heading_error = wrap_angle(after.trajectories[..., 2] - before.trajectories[..., 2] - angle)
    assert heading_error.abs().max().item() < 1e-6
    assert torch.allclose(after.probabilities, before.probabilities, atol=1e-8)


def test_trained_mode_embeddings_split_the_modes(tiny_model, tiny_tensors):
    torch.manual_seed(3)
    with torch.no_grad():
        tiny_model.proposer.mode_embed.weight.normal_()

    forecast = tiny_model.predict(tiny_tensors)

    assert not torch.allclose(forecast.trajectories[:, 0], forecast.trajectories[:, 1])


def test_without_refinement(tiny_decoder_cfg, tiny_tensors):
    cfg = replace(tiny_decoder_cfg, use_refinement=False)
    model = DonutForecaster(cfg).double()

    output = model.unroll_future(tiny_tensors)

    assert model.refiner is None
    assert output.refiner_cache is None
    assert all(step.refined is None for step in output.steps)
    assert output.forecast.trajectories.shape[2] == cfg.t_fut


def test_scene_horizons_must_match(tiny_model):
    scene = generate_synthetic_scene(GeneratorConfig(num_agents=(2, 2)), 0)

    with pytest.raises(ConfigError, match="horizons"):
        tiny_model.predict(scene_to_tensors(scene, dtype=torch.float64))


def test_empty_map_and_unobserved_agent(tiny_model, scene_dict):
    data = scene_dict(t_hist=10, t_fut=20)
    data["map"]["polylines"] = []
    late = [[t, 5.0, 2.0, 0.0, t >= 10] for t in range(30)]
    data["agents"].append({"id": "late", "type": "cyclist", "states": late})

    forecast = tiny_model.predict(scene_to_tensors(scene_from_dict(data), dtype=torch.float64))

    assert forecast.trajectories.shape[:2] == (2, 2)
    assert torch.isfinite(forecast.trajectories).all()
    assert torch.isfinite(forecast.probabilities).all()


def test_segment_tokens_do_not_depend_on_global_pose(tiny_model):
    tokenizer = tiny_model.proposer.tokenizer
    xy = torch.tensor([[0.0, 0.0], [1.0, 0.1], [2.0, 0.3], [3.0, 0.6], [4.0, 1.0]], dtype=torch.float64)
    hd = torch.tensor([0.0, 0.1, 0.2, 0.3, 0.4], dtype=torch.float64)
    frame = torch.tensor([4.0, 1.0, 0.4], dtype=torch.float64)
    angle, shift = -1.3, torch.tensor([7.0, -2.0], dtype=torch.float64)
    c, s = math.cos(angle), math.sin(angle)
    rot = torch.tensor([[c, -s], [s, c]], dtype=torch.float64)

    token = tokenize_subtrajectory(tokenizer, xy, hd, frame, 0)
    moved = tokenize_subtrajectory(
        tokenizer, xy @ rot.T + shift, hd + angle,
        torch.cat([frame[:2] @ rot.T + shift, frame[2:] + angle]), 0,
    )

    assert token.shape == (tiny_model.cfg.embed_dim,)
    assert torch.allclose(token, moved, atol=1e-9)


def test_tokenizer_rejects_wrong_segment_length(tiny_model):
    with pytest.raises(ValueError, match="t_sub"):
        tokenize_subtrajectory(
            tiny_model.proposer.tokenizer, torch.zeros(3, 2, dtype=torch.float64),
            torch.zeros(3, dtype=torch.float64), torch.zeros(3, dtype=torch.float64), 0,
        )


def test_training_loss_reaches_both_modules(tiny_model, tiny_tensors, tiny_decoder_cfg):
    output = tiny_model.unroll_future(tiny_tensors, training=True)

    losses = compute_scene_loss(output, tiny_tensors, tiny_decoder_cfg)
    losses.total.backward()

    losses.check_finite()
    for module in (tiny_model.proposer.detokenizer, tiny_model.refiner.detokenizer, tiny_model.map_encoder):
        grads = [p.grad for p in module.parameters() if p.grad is not None]
        assert grads and any(g.abs().sum().item() > 0 for g in grads)


def test_sampled_gradients_match_finite_differences(tiny_model, tiny_tensors, tiny_decoder_cfg):
    def loss_fn():
        output = tiny_model.unroll_future(tiny_tensors, training=True)
        return compute_scene_loss(output, tiny_tensors, tiny_decoder_cfg).total

    result = grad_check(loss_fn, tiny_model, num_samples=12, seed=5)

    assert result.passed(), result.worst_parameter


def test_history_segments_only_see_earlier_segments(tiny_model, tiny_tensors, tiny_decoder_cfg):
    st, t_sub = tiny_tensors, tiny_decoder_cfg.t_sub
    last = tiny_decoder_cfg.history_steps - 1
    window = slice(last * t_sub, (last + 1) * t_sub)
    positions, headings = st.positions.clone(), st.headings.clone()
    generator = torch.Generator().manual_seed(8)
    positions[:, window] += torch.randn(positions[:, window].shape, generator=generator, dtype=torch.float64) * 5.0
    headings[:, window] += 0.7
    perturbed = replace(st, positions=positions, headings=headings)

    with torch.no_grad():
        before = tiny_model.bootstrap_history(st, tiny_model.scene_context(st))
        after = tiny_model.bootstrap_history(perturbed, tiny_model.scene_context(perturbed))

    assert torch.equal(before.proposer_tokens[:last], after.proposer_tokens[:last])
    assert torch.equal(before.refiner_tokens[:last], after.refiner_tokens[:last])
    for old, new in zip(before.proposer_cache.tokens, after.proposer_cache.tokens):
        assert torch.equal(old[:last], new[:last])
    assert not torch.equal(before.proposer_tokens[last], after.proposer_tokens[last])


def test_zero_refiner_offsets_keep_the_proposal(tiny_model, tiny_tensors):
    head = tiny_model.refiner.detokenizer.head.output_layer
    with torch.no_grad():
        head.weight.zero_()
        head.bias.zero_()
        output = tiny_model.unroll_future(tiny_tensors)

    for step in output.steps:
        refined_xy, _ = to_global(step.refined.pos_loc, step.refined.hd_loc, step.refined_frames[..., None, :])
        assert torch.allclose(refined_xy, step.proposal_xy, rtol=0.0, atol=1e-9)
        assert torch.allclose(step.refined_frames[..., :2], step.proposal_xy[..., -1, :], rtol=0.0, atol=0.0)
    proposals = torch.cat([step.proposal_xy for step in output.steps], dim=2)
    assert torch.allclose(output.forecast.trajectories[..., :2], proposals, rtol=0.0, atol=1e-9)


def _block_inputs(tiny_model, tiny_tensors, gap):
    cfg = tiny_model.cfg
    k, d = cfg.num_modes, cfg.embed_dim
    generator = torch.Generator().manual_seed(2)
    x = torch.randn(1, 2, k, d, generator=generator, dtype=torch.float64)
    frames = torch.zeros(1, 2, k, 3, dtype=torch.float64)
    frames[0, 1, :, 0] = gap
    times = torch.tensor([cfg.t_hist - 1])
    valid = torch.ones(1, 2, dtype=torch.bool)
    return x, frames, times, valid, tiny_model.scene_context(tiny_tensors)


@pytest.mark.parametrize("gap,isolated", [(1000.0, True), (10.0, False)])
def test_agents_beyond_the_radius_do_not_interact(tiny_model, tiny_tensors, gap, isolated):
    assert (gap > tiny_model.cfg.radius) == isolated
    block = tiny_model.proposer.blocks[0]
    x, frames, times, valid, ctx = _block_inputs(tiny_model, tiny_tensors, gap)
    other = x.clone()
    other[0, 1] += 3.0

    with torch.no_grad():
        out = factored_block(block, x, frames, times, valid, tiny_model.proposer.new_cache(), 0, ctx)
        moved = factored_block(block, other, frames, times, valid, tiny_model.proposer.new_cache(), 0, ctx)

    assert torch.equal(out[0, 0], moved[0, 0]) == isolated
    assert not torch.equal(out[0, 1], moved[0, 1])


def test_refiner_reacts_to_a_neighbours_proposal(tiny_model, scene_dict):
    data = scene_dict(t_hist=10, t_fut=20)
    beside = [[t, float(t), 4.0, 0.0, True] for t in range(30)]
    data["agents"].append({"id": "a1", "type": "vehicle", "states": beside})
    st = scene_to_tensors(scene_from_dict(data), dtype=torch.float64)
    cfg = tiny_model.cfg

    with torch.no_grad():
        ctx = tiny_model.scene_context(st)
        boot = tiny_model.bootstrap_history(st, ctx)
        hist = boot.history
        n, k, t_sub = st.num_agents, cfg.num_modes, cfg.t_sub
        prev_frames = hist.frames[-1][:, None].expand(n, k, 3)
        time_index = cfg.t_hist - 1
        proposal, tokens = tiny_model.propose_step(
            hist.positions[-1][:, None].expand(n, k, t_sub, 2), hist.headings[-1][:, None].expand(n, k, t_sub),
            hist.valid[-1][:, None].expand(n, k, t_sub), prev_frames, time_index, hist.active,
            boot.proposer_cache, ctx, 0,
        )
        xy, hd = to_global(proposal.pos_loc, proposal.hd_loc, prev_frames[..., None, :])

        def refine(proposal_xy):
            refined, _, _ = tiny_model.refine_step(
                proposal, prev_frames, proposal_xy, hd, tokens, time_index + t_sub, hist.active,
                copy.deepcopy(boot.refiner_cache), ctx, 0,
            )
            return refined

        base = refine(xy)
        shifted = xy.clone()
        shifted[1] += torch.tensor([1.5, -1.0], dtype=torch.float64)
        nudged = refine(shifted)

    assert not torch.allclose(base.pos_loc[0], nudged.pos_loc[0], rtol=0.0, atol=1e-9)
    assert not torch.allclose(base.mode_logit[0], nudged.mode_logit[0], rtol=0.0, atol=1e-12)


def test_refined_loss_reaches_the_proposer_through_its_tokens(tiny_model, tiny_tensors, tiny_decoder_cfg):
    output = tiny_model.unroll_future(tiny_tensors, training=True)

    losses = compute_scene_loss(output, tiny_tensors, tiny_decoder_cfg)
    (losses.refine_pos + losses.refine_hd).backward()

    def trained(module):
        return any(p.grad is not None and p.grad.abs().sum().item() > 0 for p in module.parameters())

    assert trained(tiny_model.refiner.proposer_proj)
    assert trained(tiny_model.proposer.tokenizer)
    assert trained(tiny_model.proposer.blocks)
    # proposal outputs enter the refiner gradient-stopped
    assert not trained(tiny_model.proposer.detokenizer)
