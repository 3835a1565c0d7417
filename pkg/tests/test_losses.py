import math
from dataclasses import replace

import numpy as np
import pytest
import torch

import config
from errors import NumericError
from model.tokenizer import SubTrajectoryPrediction
from training.losses import (
    LossBreakdown, SegmentTargets, _winners, classification_loss, compute_scene_loss, laplace_nll, log_i0,
    regression_loss, segment_targets, select_winner, von_mises_nll,
)


def _t(*values):
    return torch.tensor(values, dtype=torch.float64)


def test_laplace_at_the_mode_is_log_two():
    assert laplace_nll(_t(0.0), _t(1.0), _t(0.0)).item() == pytest.approx(math.log(2.0))


def test_laplace_grows_linearly_with_distance():
    values = laplace_nll(_t(0.0, 0.0), _t(0.5, 0.5), _t(1.0, -2.0))
    assert values.tolist() == pytest.approx([math.log(1.0) + 2.0, math.log(1.0) + 4.0])


def test_laplace_rejects_non_positive_scale():
    with pytest.raises(NumericError):
        laplace_nll(_t(0.0), _t(0.0), _t(1.0))


def test_von_mises_flat_limit_is_log_two_pi():
    value = von_mises_nll(_t(0.3), _t(1e-9), _t(2.0)).item()
    assert value == pytest.approx(math.log(2 * math.pi), abs=1e-8)


def test_von_mises_is_periodic_in_the_target():
    a = von_mises_nll(_t(0.5), _t(4.0), _t(1.0))
    b = von_mises_nll(_t(0.5), _t(4.0), _t(1.0 + 2 * math.pi))
    assert a.item() == pytest.approx(b.item(), abs=1e-12)


def test_von_mises_rejects_non_positive_concentration():
    with pytest.raises(NumericError):
        von_mises_nll(_t(0.0), _t(-1.0), _t(0.0))


@pytest.mark.parametrize("x", [0.0, 1e-3, 0.5, 2.0, 7.5, 9.999, 10.0, 10.001, 25.0, 300.0])
def test_log_i0_matches_numpy(x):
    assert log_i0(_t(x)).item() == pytest.approx(math.log(np.i0(x)), rel=1e-8, abs=1e-12)


def test_i0_relative_error_below_1e10_across_the_switch():
    limit = config.BESSEL_SERIES_LIMIT
    grid = np.concatenate([
        np.linspace(0.0, 12.0, 241),
        np.linspace(limit - 1.0, limit + 1.0, 201),
        np.array([45.0, 60.0, 120.0]),
    ])

    ours = log_i0(torch.tensor(grid, dtype=torch.float64)).numpy()

    # |log a - log b| bounds the relative error of a against b
    worst = np.max(np.abs(ours - np.log(np.i0(grid))))
    assert worst < 1e-10


def test_log_i0_is_continuous_at_the_switch():
    limit = config.BESSEL_SERIES_LIMIT
    below = log_i0(_t(limit - 1e-9)).item()
    above = log_i0(_t(limit + 1e-9)).item()
    assert above == pytest.approx(below, abs=1e-7)


def test_winner_is_closest_endpoint():
    endpoints = _t(5.0, 0.0, 1.0, 1.0, -3.0, 0.0).reshape(1, 3, 2)
    assert select_winner(endpoints, _t(0.0, 0.0).reshape(1, 2)).tolist() == [1]


def test_winner_ties_go_to_lowest_mode():
    endpoints = _t(1.0, 0.0, -1.0, 0.0, 0.0, 1.0).reshape(1, 3, 2)
    assert select_winner(endpoints, _t(0.0, 0.0).reshape(1, 2)).tolist() == [0]


def test_classification_with_equal_likelihoods_is_their_negative():
    logits = torch.randn(3, 4, dtype=torch.float64)
    ll = torch.full((3, 4), -2.5, dtype=torch.float64)

    assert torch.allclose(classification_loss(logits, ll), torch.full((3,), 2.5, dtype=torch.float64))


def test_classification_with_one_likely_mode_is_its_cross_entropy():
    logits = _t(0.2, -1.0, 0.7).reshape(1, 3)
    ll = _t(0.0, -1e4, -1e4).reshape(1, 3)

    expected = -torch.log_softmax(logits, dim=-1)[0, 0]
    assert classification_loss(logits, ll)[0].item() == pytest.approx(expected.item(), abs=1e-9)


def test_classification_uniform_logits():
    logits = torch.zeros(1, 2, dtype=torch.float64)
    ll = _t(-1.0, -3.0).reshape(1, 2)

    expected = -math.log(0.5 * math.exp(-1.0) + 0.5 * math.exp(-3.0))
    assert classification_loss(logits, ll)[0].item() == pytest.approx(expected)


def test_classification_rejects_non_finite_likelihood():
    with pytest.raises(NumericError):
        classification_loss(torch.zeros(1, 2), torch.tensor([[0.0, float("nan")]]))


def test_segment_targets_beyond_horizon_are_invalid(tiny_tensors):
    targets = segment_targets(tiny_tensors, 18, 5)

    assert targets.valid[:, :2].all()
    assert not targets.valid[:, 2:].any()
    assert torch.equal(targets.positions[:, :2], tiny_tensors.positions[:, 28:30])


def test_breakdown_total_is_component_sum(tiny_model, tiny_tensors, tiny_decoder_cfg):
    losses = compute_scene_loss(tiny_model.unroll_future(tiny_tensors, training=True), tiny_tensors, tiny_decoder_cfg)

    values = losses.as_floats()
    names = LossBreakdown.component_names()
    assert len(names) == 9
    assert values["total"] == pytest.approx(sum(values[n] for n in names))
    assert all(math.isfinite(v) for v in values.values())


def test_ablations_zero_their_components(tiny_model, tiny_tensors, tiny_decoder_cfg):
    cfg = replace(tiny_decoder_cfg, use_overprediction=False)

    losses = compute_scene_loss(tiny_model.unroll_future(tiny_tensors, training=True), tiny_tensors, cfg)

    for name in ("over_proposal_pos", "over_proposal_hd", "over_refine_pos", "over_refine_hd"):
        assert getattr(losses, name).item() == 0.0
    assert losses.proposal_pos.item() != 0.0


def test_full_horizon_winner_mode(tiny_model, tiny_tensors, tiny_decoder_cfg):
    cfg = replace(tiny_decoder_cfg, winner_mode="full_horizon")

    losses = compute_scene_loss(tiny_model.unroll_future(tiny_tensors, training=True), tiny_tensors, cfg)

    losses.check_finite()
    assert losses.refine_pos.item() != 0.0


def _pin_endpoint(step, mode, target):
    xy = step.proposal_xy.clone()
    xy[:, mode, -1] = target
    return replace(step, proposal_xy=xy)


@pytest.fixture
def unrolled(tiny_model, tiny_tensors):
    with torch.no_grad():
        return tiny_model.unroll_future(tiny_tensors, training=True)


def test_full_horizon_winner_uses_last_proposal_endpoint(unrolled, tiny_tensors, tiny_decoder_cfg):
    cfg = replace(tiny_decoder_cfg, winner_mode="full_horizon")
    st = tiny_tensors
    gt_end = st.positions[:, st.t_hist + cfg.t_fut - 1]
    # the refined forecast points at mode 0, the last proposal at mode 1
    trajectories = unrolled.forecast.trajectories.clone()
    trajectories[:, 0, -1, :2] = gt_end
    output = replace(
        unrolled,
        forecast=replace(unrolled.forecast, trajectories=trajectories),
        steps=unrolled.steps[:-1] + [_pin_endpoint(unrolled.steps[-1], 1, gt_end)],
    )

    pairs = _winners(output, st, cfg)

    assert len(pairs) == len(output.steps)
    ok = st.valid[:, st.t_hist + cfg.t_fut - 1]
    for winner, mask in pairs:
        assert torch.equal(mask, ok)
        assert torch.equal(winner[ok], torch.ones_like(winner[ok]))


def test_per_step_winner_follows_each_step(unrolled, tiny_tensors, tiny_decoder_cfg):
    st = tiny_tensors
    t_end = st.t_hist + tiny_decoder_cfg.t_sub - 1
    output = replace(unrolled, steps=[_pin_endpoint(unrolled.steps[0], 1, st.positions[:, t_end])] + unrolled.steps[1:])

    winner, ok = _winners(output, st, tiny_decoder_cfg)[0]

    assert torch.equal(ok, st.valid[:, t_end])
    assert torch.equal(winner[ok], torch.ones_like(winner[ok]))


@pytest.mark.parametrize("mode", ["per_step", "full_horizon"])
def test_agents_without_an_endpoint_fall_back_to_mode_zero(unrolled, tiny_tensors, tiny_decoder_cfg, mode):
    cfg = replace(tiny_decoder_cfg, winner_mode=mode)
    valid = tiny_tensors.valid.clone()
    valid[0, tiny_tensors.t_hist:] = False
    st = replace(tiny_tensors, valid=valid)

    for winner, ok in _winners(unrolled, st, cfg):
        assert not ok[0]
        assert winner[0].item() == 0


def test_regression_gradients_skip_losing_modes():
    generator = torch.Generator().manual_seed(0)

    def param(*shape, positive=False):
        value = torch.randn(*shape, generator=generator, dtype=torch.float64)
        return (value.abs() + 0.5 if positive else value).requires_grad_()

    n, k, t = 2, 3, 5
    prediction = SubTrajectoryPrediction(
        pos_loc=param(n, k, t, 2), pos_scale=param(n, k, t, 2, positive=True),
        hd_loc=param(n, k, t), hd_conc=param(n, k, t, positive=True),
        over_pos_loc=None, over_pos_scale=None, over_hd_loc=None, over_hd_conc=None,
        mode_logit=param(n, k),
    )
    targets = SegmentTargets(
        torch.randn(n, t, 2, generator=generator, dtype=torch.float64),
        torch.zeros(n, t, dtype=torch.float64),
        torch.ones(n, t, dtype=torch.bool),
    )
    winner = torch.tensor([1, 2])

    parts = regression_loss(prediction, torch.zeros(n, k, 3, dtype=torch.float64), targets, None, winner,
                            torch.ones(n, dtype=torch.bool))
    (parts['pos'][0] + parts['hd'][0]).backward()

    for agent, best in enumerate(winner.tolist()):
        for mode in range(k):
            grad = prediction.pos_loc.grad[agent, mode]
            if mode == best:
                assert grad.abs().sum().item() > 0
            else:
                assert torch.equal(grad, torch.zeros_like(grad))
    assert set(parts) == {'pos', 'hd'}


def test_densities_integrate_to_one():
    x = torch.linspace(-40.0, 40.0, 400001, dtype=torch.float64)
    laplace = torch.exp(-laplace_nll(_t(0.3), _t(0.7), x))
    assert torch.trapezoid(laplace, x).item() == pytest.approx(1.0, abs=1e-6)

    theta = torch.linspace(-math.pi, math.pi, 20001, dtype=torch.float64)
    for conc in (0.5, 4.0, 25.0):
        density = torch.exp(-von_mises_nll(_t(1.1), _t(conc), theta))
        assert torch.trapezoid(density, theta).item() == pytest.approx(1.0, abs=1e-6)
