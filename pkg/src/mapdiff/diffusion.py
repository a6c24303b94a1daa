"""Forward corruption, the deterministic reverse update, and the sampling loop.

Corruption draws z_t = sqrt(abar(t)) z0 + sqrt(1 - abar(t)) eps. Sampling
starts from pure noise and repeatedly asks the decoder for a clean-map
estimate, transporting the latent toward t=0 with deterministic DDIM
steps whose time pairs may be asymmetric: the decoder is told a noisier
time than the latent nominally carries, which compensates its bias toward
over-denoising.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from . import codec as codec_mod
from .errors import ContractError, DomainError, ValidationError
from .schedule import ScheduleParams, coeff_arrays, coeffs

# Depth predictions closer than this fraction of max_value count as unchanged
# when measuring trajectory instability.
DEPTH_UNCERTAINTY_FRACTION = 0.05


@dataclass(frozen=True)
class TimeSpec:
    """Sampling-loop shape: number of refinement steps and time offset td."""

    steps: int = 3
    td: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")
        if self.td < 0:
            raise ValidationError("td must be >= 0")


@dataclass
class SampleTrajectory:
    """Everything one sampling run produced, at 1/4 (latent) resolution.

    per_step_predictions holds the decoded map after each decoder call;
    per_step_raw the matching head outputs (logits or normalized depth).
    uncertainty is the fraction of the steps-1 consecutive transitions at
    which a pixel's decoded value changed (identically 0 for steps=1).
    """

    per_step_predictions: list = field(default_factory=list)
    per_step_raw: list = field(default_factory=list)
    final_prediction: torch.Tensor | None = None
    final_raw: torch.Tensor | None = None
    uncertainty: torch.Tensor | None = None
    steps: int = 0
    td: int = 0


def corrupt(params: ScheduleParams, encoded: torch.Tensor, t,
            eps: torch.Tensor) -> torch.Tensor:
    """sqrt(abar(t)) * encoded + sqrt(1 - abar(t)) * eps.

    t may be a scalar or a 1-D batch of times, one per leading element of
    `encoded` (broadcast over the remaining dims).
    """
    if eps.shape != encoded.shape:
        raise ContractError(
            f"eps shape {tuple(eps.shape)} != encoded shape {tuple(encoded.shape)}"
        )
    # keep scalar times at full precision: a float32 round-trip here would
    # evaluate abar at a slightly different t than ddim_step does
    t_tensor = torch.as_tensor(t, dtype=torch.float64)
    if t_tensor.ndim == 0:
        c = coeffs(params, float(t_tensor))
        return c.sqrt_alpha_bar * encoded + c.sqrt_one_minus_alpha_bar * eps
    if t_tensor.ndim != 1 or t_tensor.shape[0] != encoded.shape[0]:
        raise ContractError("per-element t must be 1-D with one entry per batch item")
    sa, sb = coeff_arrays(params, t_tensor.numpy())
    shape = (-1,) + (1,) * (encoded.ndim - 1)
    sa = torch.from_numpy(sa).to(encoded.dtype).reshape(shape)
    sb = torch.from_numpy(sb).to(encoded.dtype).reshape(shape)
    return sa * encoded + sb * eps


def time_pairs(spec: TimeSpec) -> list:
    """[(t_now, t_next)] with t_now = 1 - step/steps and
    t_next = max(1 - (step + 1 + td)/steps, 0)."""
    pairs = []
    for step in range(spec.steps):
        t_now = 1.0 - step / spec.steps
        t_next = max(1.0 - (step + 1 + spec.td) / spec.steps, 0.0)
        pairs.append((t_now, t_next))
    return pairs


def ddim_step(params: ScheduleParams, map_t: torch.Tensor,
              pred_encoded: torch.Tensor, t_now: float,
              t_next: float) -> torch.Tensor:
    """Deterministic transport of the latent from t_now toward t_next.

    eps_hat = (map_t - sqrt(abar_now) pred) / sqrt(1 - abar_now)
    result  = sqrt(abar_next) pred + sqrt(1 - abar_next) eps_hat
    """
    if t_next > t_now:
        raise ContractError(f"t_next ({t_next}) must be <= t_now ({t_now})")
    if map_t.shape != pred_encoded.shape:
        raise ContractError("map_t and pred_encoded shapes must match")
    now = coeffs(params, t_now)
    if now.sqrt_one_minus_alpha_bar == 0.0:
        raise DomainError("abar(t_now) = 1 exactly; reverse update undefined")
    nxt = coeffs(params, t_next)
    eps_hat = (map_t - now.sqrt_alpha_bar * pred_encoded) / now.sqrt_one_minus_alpha_bar
    return nxt.sqrt_alpha_bar * pred_encoded + nxt.sqrt_one_minus_alpha_bar * eps_hat


def _changed(spec, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if spec.strategy == "continuous":
        delta = DEPTH_UNCERTAINTY_FRACTION * spec.max_value
        return (a - b).abs() > delta
    return a != b


def sample(condition, decoder, codec: codec_mod.CodecSpec,
           params: ScheduleParams, spec: TimeSpec, rng_seed: int,
           dtype=torch.float32) -> SampleTrajectory:
    """Refine pure noise into a map prediction for one image.

    `decoder` is called as decoder(noisy, condition, t) and must return the
    task head output at the condition's resolution. After each call the
    decoded prediction is recorded, re-encoded, and used for the DDIM
    transport; the image encoder is never touched here, so conditioning
    cost is paid once however many steps run.
    """
    feats = condition.features
    if feats.ndim != 4 or feats.shape[0] != 1:
        raise ContractError("sample expects a single-image condition (1, C, h, w)")
    h, w = feats.shape[-2:]
    c = codec_mod.channels(codec)
    g = torch.Generator().manual_seed(rng_seed)
    map_t = torch.randn(1, c, h, w, generator=g, dtype=dtype)

    traj = SampleTrajectory(steps=spec.steps, td=spec.td)
    with torch.no_grad():
        for t_now, t_next in time_pairs(spec):
            raw = decoder(map_t, condition, t_now)
            decoded = codec_mod.decode(codec, raw)
            traj.per_step_raw.append(raw[0])
            traj.per_step_predictions.append(decoded[0])
            pred_encoded = codec_mod.encode(codec, decoded, dtype=dtype)
            map_t = ddim_step(params, map_t, pred_encoded, t_now, t_next)

    traj.final_raw = traj.per_step_raw[-1]
    traj.final_prediction = traj.per_step_predictions[-1]
    if spec.steps == 1:
        traj.uncertainty = torch.zeros(h, w, dtype=dtype)
    else:
        changes = torch.zeros(h, w, dtype=dtype)
        for a, b in zip(traj.per_step_predictions, traj.per_step_predictions[1:]):
            changes += _changed(codec, a, b).to(dtype)
        traj.uncertainty = changes / (spec.steps - 1)
    return traj
