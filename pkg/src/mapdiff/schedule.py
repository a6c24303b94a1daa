"""Continuous-time noise schedules.

A schedule maps time t in [0, 1] to the log signal-to-noise ratio
gamma(t) = log(abar / (1 - abar)); abar(t) = sigmoid(gamma(t)) is the
fraction of signal variance that survives corruption at time t.
Convention: t = 0 is clean signal, t = 1 is (almost) pure noise.

All math here is 64-bit; inputs may be Python floats or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ValidationError

HALF_PI = math.pi / 2.0


@dataclass(frozen=True)
class ScheduleParams:
    """Parameters for one noise schedule.

    kind "cosine" uses the (ns, ds) offsets; kind "linear" integrates a
    linearly increasing noise rate between beta_min and beta_max.
    clamp_eps floors the argument of the log so gamma stays finite near t=0.
    """

    kind: str = "cosine"
    ns: float = 0.0002
    ds: float = 0.00025
    beta_min: float = 0.1
    beta_max: float = 20.0
    clamp_eps: float = 1e-5

    def __post_init__(self):
        if self.kind not in ("cosine", "linear"):
            raise ValidationError(f"unknown schedule kind {self.kind!r}")
        if self.ns < 0 or self.ds < 0:
            raise ValidationError("ns and ds must be non-negative")
        if self.clamp_eps <= 0:
            raise ValidationError("clamp_eps must be positive")
        if self.kind == "linear" and not 0 < self.beta_min < self.beta_max:
            raise ValidationError("linear schedule requires 0 < beta_min < beta_max")


@dataclass(frozen=True)
class CorruptionCoeffs:
    """(sqrt(abar), sqrt(1 - abar)); squares sum to 1."""

    sqrt_alpha_bar: float
    sqrt_one_minus_alpha_bar: float


def _check_time(t):
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"time must lie in [0, 1], got {t!r}")
    return arr


def log_snr(params: ScheduleParams, t):
    """Log-SNR gamma(t); scalar in, float out; array in, float64 array out.

    cosine: gamma = -log(max(cos((t + ns) / (1 + ds) * pi/2)^-2 - 1, eps))
    linear: gamma = -log(max(exp(bmin*t + (bmax - bmin)*t^2/2) - 1, eps))
    """
    arr = _check_time(t)
    if params.kind == "cosine":
        f = np.cos((arr + params.ns) / (1.0 + params.ds) * HALF_PI)
        inner = f ** -2.0 - 1.0
    else:
        b = params.beta_min * arr + 0.5 * (params.beta_max - params.beta_min) * arr**2
        inner = np.expm1(b)
    gamma = -np.log(np.maximum(inner, params.clamp_eps))
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(gamma)
    return gamma


def alpha_bar(gamma):
    """abar = sigmoid(gamma), the inverse of gamma = log(abar/(1-abar))."""
    g = np.asarray(gamma, dtype=np.float64)
    out = np.where(g >= 0, 1.0 / (1.0 + np.exp(-g)), np.exp(g) / (1.0 + np.exp(g)))
    if np.ndim(gamma) == 0:
        return float(out)
    return out


def coeffs(params: ScheduleParams, t: float) -> CorruptionCoeffs:
    """Corruption coefficients (sqrt(abar(t)), sqrt(1 - abar(t))) at scalar t."""
    a = alpha_bar(log_snr(params, float(t)))
    return CorruptionCoeffs(math.sqrt(a), math.sqrt(1.0 - a))


def coeff_arrays(params: ScheduleParams, t):
    """Vectorized coeffs for a 1-D array of times; returns two float64 arrays."""
    a = alpha_bar(log_snr(params, np.asarray(t, dtype=np.float64)))
    a = np.atleast_1d(a)
    return np.sqrt(a), np.sqrt(1.0 - a)
