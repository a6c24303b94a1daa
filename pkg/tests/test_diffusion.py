"""Corruption, DDIM transport, time pairs, and the sampling loop."""

import types

import pytest
import torch

from mapdiff.codec import CodecSpec
from mapdiff.diffusion import (
    SampleTrajectory,
    TimeSpec,
    corrupt,
    ddim_step,
    sample,
    time_pairs,
)
from mapdiff.errors import ContractError, DomainError, ValidationError
from mapdiff.schedule import ScheduleParams, coeffs

PARAMS = ScheduleParams(kind="cosine")


def test_corrupt_low_end_identity():
    g = torch.Generator().manual_seed(0)
    z0 = torch.randn(2, 3, 4, 4, generator=g, dtype=torch.float64)
    eps = torch.randn(2, 3, 4, 4, generator=g, dtype=torch.float64)
    out = corrupt(PARAMS, z0, 0.0, eps)
    # clamped schedule: abar(0) = 1/(1+1e-5), so sqrt(1-abar) ~ 3.2e-3
    assert (out - z0).abs().max() < 4e-3 * eps.abs().max() + 1e-5


def test_corrupt_high_end_noise():
    g = torch.Generator().manual_seed(1)
    z0 = torch.randn(3, 8, 8, generator=g, dtype=torch.float64)
    eps = torch.randn(3, 8, 8, generator=g, dtype=torch.float64)
    out = corrupt(PARAMS, z0, 1.0, eps)
    assert (out - eps).abs().max() < 1e-3 * z0.abs().max() + 1e-6


def test_corrupt_monte_carlo_statistics():
    g = torch.Generator().manual_seed(7)
    z0 = torch.randn(3, 8, 8, generator=g, dtype=torch.float64)
    for t in (0.25, 0.5, 0.75):
        c = coeffs(PARAMS, t)
        draws = torch.randn(10_000, 3, 8, 8, generator=g, dtype=torch.float64)
        zt = corrupt(PARAMS, z0.expand(10_000, 3, 8, 8), t, draws)
        mean_err = (zt.mean(0) - c.sqrt_alpha_bar * z0).abs()
        assert mean_err.max() <= 4.0 * c.sqrt_one_minus_alpha_bar / 100.0
        var = zt.var(0).mean().item()
        expected = c.sqrt_one_minus_alpha_bar**2
        assert abs(var - expected) <= 0.05 * expected


def test_corrupt_batched_t_matches_scalar():
    g = torch.Generator().manual_seed(2)
    z0 = torch.randn(4, 2, 4, 4, generator=g, dtype=torch.float64)
    eps = torch.randn(4, 2, 4, 4, generator=g, dtype=torch.float64)
    ts = torch.tensor([0.1, 0.4, 0.7, 1.0], dtype=torch.float64)
    batched = corrupt(PARAMS, z0, ts, eps)
    for i, t in enumerate(ts):
        single = corrupt(PARAMS, z0[i : i + 1], float(t), eps[i : i + 1])
        assert torch.allclose(batched[i : i + 1], single, atol=1e-12)


def test_corrupt_shape_contracts():
    z0 = torch.zeros(2, 3, 4, 4)
    with pytest.raises(ContractError):
        corrupt(PARAMS, z0, 0.5, torch.zeros(2, 3, 4, 5))
    with pytest.raises(ContractError):
        corrupt(PARAMS, z0, torch.tensor([0.5, 0.5, 0.5]), torch.zeros_like(z0))


def _pairs_close(got, want):
    assert len(got) == len(want)
    for (gn, gx), (wn, wx) in zip(got, want):
        assert gn == pytest.approx(wn, abs=1e-12)
        assert gx == pytest.approx(wx, abs=1e-12)


def test_time_pairs_examples():
    _pairs_close(time_pairs(TimeSpec(steps=3, td=1)),
                 [(1.0, 1.0 / 3.0), (2.0 / 3.0, 0.0), (1.0 / 3.0, 0.0)])
    _pairs_close(time_pairs(TimeSpec(steps=1, td=1)), [(1.0, 0.0)])
    _pairs_close(time_pairs(TimeSpec(steps=3, td=0)),
                 [(1.0, 2.0 / 3.0), (2.0 / 3.0, 1.0 / 3.0), (1.0 / 3.0, 0.0)])


@pytest.mark.parametrize("steps,td", [(1, 0), (2, 1), (5, 0), (5, 3), (17, 2)])
def test_time_pairs_endpoints(steps, td):
    pairs = time_pairs(TimeSpec(steps=steps, td=td))
    assert len(pairs) == steps
    assert pairs[0][0] == 1.0
    assert pairs[-1][1] == 0.0
    for t_now, t_next in pairs:
        assert 0.0 <= t_next <= t_now <= 1.0


def test_time_spec_validation():
    with pytest.raises(ValidationError):
        TimeSpec(steps=0)
    with pytest.raises(ValidationError):
        TimeSpec(steps=3, td=-1)


def test_ddim_exact_transport():
    # an oracle denoiser (pred = z0) must move corrupt(z0, t_now, eps)
    # exactly onto corrupt(z0, t_next, eps)
    g = torch.Generator().manual_seed(3)
    worst = 0.0
    for _ in range(100):
        z0 = torch.randn(2, 4, 4, generator=g, dtype=torch.float64)
        eps = torch.randn(2, 4, 4, generator=g, dtype=torch.float64)
        a, b = torch.rand(2, generator=g, dtype=torch.float64).tolist()
        t_now, t_next = max(a, b), min(a, b)
        map_t = corrupt(PARAMS, z0, t_now, eps)
        moved = ddim_step(PARAMS, map_t, z0, t_now, t_next)
        expected = corrupt(PARAMS, z0, t_next, eps)
        worst = max(worst, (moved - expected).abs().max().item())
    assert worst < 1e-9


def test_ddim_fixed_point():
    g = torch.Generator().manual_seed(4)
    map_t = torch.randn(3, 4, 4, generator=g, dtype=torch.float64)
    pred = torch.randn(3, 4, 4, generator=g, dtype=torch.float64)
    out = ddim_step(PARAMS, map_t, pred, 0.5, 0.5)
    assert torch.allclose(out, map_t, atol=1e-12)


def test_ddim_contracts():
    x = torch.zeros(1, 4, 4)
    with pytest.raises(ContractError):
        ddim_step(PARAMS, x, x, 0.3, 0.5)
    with pytest.raises(ContractError):
        ddim_step(PARAMS, x, torch.zeros(2, 4, 4), 0.5, 0.3)


def test_ddim_degenerate_time():
    # a clamp so tight that abar(0) rounds to 1 in 64-bit must be refused
    degenerate = ScheduleParams(kind="cosine", ns=0.0, clamp_eps=1e-300)
    x = torch.zeros(1, 4, 4, dtype=torch.float64)
    with pytest.raises(DomainError):
        ddim_step(degenerate, x, x, 0.0, 0.0)


def _condition(h=4, w=4, c_cond=2):
    return types.SimpleNamespace(features=torch.zeros(1, c_cond, h, w))


class ScriptedDecoder:
    """Returns pre-baked logits per call; records every call's time."""

    def __init__(self, outputs):
        self.outputs = [o.clone() for o in outputs]
        self.calls = 0
        self.times = []

    def __call__(self, noisy, condition, t):
        out = self.outputs[self.calls]
        self.calls += 1
        self.times.append(t)
        return out.unsqueeze(0)


def test_sample_single_step():
    spec = CodecSpec("onehot", 0.01, num_classes=3)
    logits = torch.zeros(3, 4, 4)
    logits[1] = 1.0
    dec = ScriptedDecoder([logits])
    traj = sample(_condition(), dec, spec, PARAMS, TimeSpec(steps=1, td=1),
                  rng_seed=0)
    assert dec.calls == 1
    assert torch.equal(traj.uncertainty, torch.zeros(4, 4))
    assert torch.equal(traj.final_prediction, torch.ones(4, 4, dtype=torch.long))


def test_sample_uncertainty_counts_changes():
    # one pixel changes at 1 of 2 transitions -> uncertainty 0.5 there
    spec = CodecSpec("onehot", 0.01, num_classes=3)
    base = torch.zeros(3, 4, 4)
    base[0] = 1.0
    flip = base.clone()
    flip[:, 0, 0] = torch.tensor([0.0, 2.0, 0.0])
    dec = ScriptedDecoder([base, flip, flip])
    traj = sample(_condition(), dec, spec, PARAMS, TimeSpec(steps=3, td=1),
                  rng_seed=0)
    assert dec.calls == 3
    assert traj.uncertainty[0, 0] == pytest.approx(0.5)
    assert traj.uncertainty.sum() == pytest.approx(0.5)
    assert len(traj.per_step_predictions) == 3
    assert dec.times == pytest.approx([1.0, 2.0 / 3.0, 1.0 / 3.0])
    assert torch.equal(traj.final_prediction, traj.per_step_predictions[-1])


def test_sample_uncertainty_range():
    spec = CodecSpec("onehot", 0.01, num_classes=4)
    g = torch.Generator().manual_seed(5)
    outs = [torch.randn(4, 4, 4, generator=g) for _ in range(6)]
    dec = ScriptedDecoder(outs)
    traj = sample(_condition(), dec, spec, PARAMS, TimeSpec(steps=6, td=1),
                  rng_seed=1)
    assert traj.uncertainty.min() >= 0.0
    assert traj.uncertainty.max() <= 1.0
    stable = torch.ones(4, 4, dtype=torch.bool)
    for a, b in zip(traj.per_step_predictions, traj.per_step_predictions[1:]):
        stable &= a == b
    assert torch.equal(traj.uncertainty[stable], torch.zeros(int(stable.sum())))


def test_sample_deterministic():
    spec = CodecSpec("onehot", 0.01, num_classes=3)
    g = torch.Generator().manual_seed(6)
    outs = [torch.randn(3, 4, 4, generator=g) for _ in range(3)]
    t1 = sample(_condition(), ScriptedDecoder(outs), spec, PARAMS,
                TimeSpec(steps=3, td=1), rng_seed=9)
    t2 = sample(_condition(), ScriptedDecoder(outs), spec, PARAMS,
                TimeSpec(steps=3, td=1), rng_seed=9)
    for a, b in zip(t1.per_step_raw, t2.per_step_raw):
        assert torch.equal(a, b)
    assert torch.equal(t1.uncertainty, t2.uncertainty)


def test_sample_depth_uncertainty_threshold():
    # depth values count as changed only beyond 5% of max_value
    spec = CodecSpec("continuous", 0.01, max_value=10.0)
    near = torch.full((1, 4, 4), 0.50)
    within = torch.full((1, 4, 4), 0.54)  # |delta| = 0.4 m < 0.5 m
    beyond = torch.full((1, 4, 4), 0.60)  # |delta| = 0.6 m > 0.5 m
    dec = ScriptedDecoder([near, within, beyond])
    traj = sample(_condition(), dec, spec, PARAMS, TimeSpec(steps=3, td=1),
                  rng_seed=0)
    assert torch.equal(traj.uncertainty, torch.full((4, 4), 0.5))
