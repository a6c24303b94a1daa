"""Encode ground-truth maps as bounded continuous signals and back.

Discrete labels become channel vectors with entries in [-scale, +scale]
(one-hot, analog bits, or a learnable class embedding squashed by a
sigmoid); continuous depth is normalized by max_value and mapped affinely
into the same amplitude range. Decoding always goes through the task
head's output: per-pixel argmax for segmentation, clamp-and-rescale for
depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import torch

from .errors import ContractError, DomainError, ValidationError

STRATEGIES = ("onehot", "analog_bits", "embedding", "continuous")
DISCRETE_STRATEGIES = ("onehot", "analog_bits", "embedding")

# Lower bound for decoded normalized depth; keeps the (0, 1] contract total.
DEPTH_FLOOR = 1e-6


@dataclass(frozen=True)
class CodecSpec:
    """Immutable description of one encoding scheme.

    For the embedding strategy, `table` holds the raw (pre-sigmoid) K x d
    rows; during training it aliases the live learnable parameter, in
    checkpoints it is a frozen snapshot.
    """

    strategy: str
    scale: float
    num_classes: int | None = None
    num_bits: int | None = None
    embed_dim: int | None = None
    max_value: float | None = None
    table: torch.Tensor | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown codec strategy {self.strategy!r}")
        if self.scale <= 0:
            raise ValidationError("scale must be positive")
        if self.strategy in DISCRETE_STRATEGIES:
            if self.num_classes is None or self.num_classes < 2:
                raise ValidationError("discrete strategies need num_classes >= 2")
        if self.strategy == "analog_bits":
            bits = self.num_bits
            if bits is None:
                bits = max(1, math.ceil(math.log2(self.num_classes)))
                object.__setattr__(self, "num_bits", bits)
            if 2**bits < self.num_classes:
                raise ValidationError("2^num_bits must cover num_classes")
        if self.strategy == "embedding":
            if self.embed_dim is None or self.embed_dim < 1:
                raise ValidationError("embedding strategy needs embed_dim >= 1")
            if self.table is not None and tuple(self.table.shape) != (
                self.num_classes,
                self.embed_dim,
            ):
                raise ValidationError(
                    f"embedding table shape {tuple(self.table.shape)} does not match "
                    f"(num_classes, embed_dim) = ({self.num_classes}, {self.embed_dim})"
                )
        if self.strategy == "continuous":
            if self.max_value is None or self.max_value <= 0:
                raise ValidationError("continuous strategy needs max_value > 0")


def channels(spec: CodecSpec) -> int:
    """Channel count of the encoded signal."""
    if spec.strategy == "onehot":
        return spec.num_classes
    if spec.strategy == "analog_bits":
        return spec.num_bits
    if spec.strategy == "embedding":
        return spec.embed_dim
    return 1


def random_embedding_table(num_classes: int, embed_dim: int, seed: int,
                           dtype=torch.float32) -> torch.Tensor:
    """Unit-Gaussian K x d table; rows are almost surely pairwise distinct."""
    g = torch.Generator().manual_seed(seed)
    return torch.randn(num_classes, embed_dim, generator=g, dtype=dtype)


def with_table(spec: CodecSpec, table: torch.Tensor) -> CodecSpec:
    """Copy of `spec` pointing at `table` (live parameter or frozen snapshot)."""
    return replace(spec, table=table)


def class_encodings(spec: CodecSpec, dtype=None) -> torch.Tensor:
    """(K, C) matrix whose row k is the encoding of label k."""
    if spec.strategy not in DISCRETE_STRATEGIES:
        raise ContractError("class_encodings is defined for discrete strategies only")
    k = spec.num_classes
    if spec.strategy == "onehot":
        rows = torch.eye(k, dtype=dtype or torch.get_default_dtype())
        return (rows * 2.0 - 1.0) * spec.scale
    if spec.strategy == "analog_bits":
        b = spec.num_bits
        labels = torch.arange(k)
        shifts = torch.arange(b - 1, -1, -1)  # MSB first
        bits = (labels[:, None] >> shifts[None, :]) & 1
        rows = bits.to(dtype or torch.get_default_dtype())
        return (rows * 2.0 - 1.0) * spec.scale
    if spec.table is None:
        raise ContractError("embedding codec has no table attached")
    rows = spec.table if dtype is None else spec.table.to(dtype)
    return (torch.sigmoid(rows) * 2.0 - 1.0) * spec.scale


def encode(spec: CodecSpec, gt: torch.Tensor, dtype=None) -> torch.Tensor:
    """Encode a ground-truth map into the bounded continuous signal.

    Labels: (..., H, W) integer tensor in [0, K) -> (..., C, H, W).
    Depth: (..., H, W) positive tensor in (0, max_value] -> (..., 1, H, W).
    """
    if spec.strategy == "continuous":
        if torch.any(gt <= 0):
            raise DomainError("depth values must be positive")
        if torch.any(gt > spec.max_value):
            raise DomainError(f"depth values must be <= max_value ({spec.max_value})")
        norm = gt / spec.max_value
        enc = (norm * 2.0 - 1.0) * spec.scale
        if dtype is not None:
            enc = enc.to(dtype)
        return enc.unsqueeze(-3)

    if not gt.dtype.is_floating_point:
        labels = gt.long()
    else:
        raise ContractError("discrete strategies expect an integer label map")
    if torch.any(labels < 0) or torch.any(labels >= spec.num_classes):
        raise DomainError(f"labels must lie in [0, {spec.num_classes})")
    rows = class_encodings(spec, dtype=dtype)
    enc = rows[labels]  # (..., H, W, C)
    return torch.movedim(enc, -1, -3)


def decode(spec: CodecSpec, prediction: torch.Tensor) -> torch.Tensor:
    """Map decoder output back to a label map or a depth map.

    Segmentation: (..., K, H, W) logits -> (..., H, W) labels; ties go to
    the lowest class index. Depth: (..., 1, H, W) normalized prediction ->
    (..., H, W) meters, clamped into (0, 1] before rescaling.
    """
    if spec.strategy == "continuous":
        if prediction.shape[-3] != 1:
            raise ContractError(
                f"depth head must have 1 channel, got {prediction.shape[-3]}"
            )
        norm = prediction.squeeze(-3).clamp(DEPTH_FLOOR, 1.0)
        return norm * spec.max_value
    if prediction.shape[-3] != spec.num_classes:
        raise ContractError(
            f"expected {spec.num_classes} logit channels, got {prediction.shape[-3]}"
        )
    # torch.argmax returns the first maximal index, i.e. the lowest class.
    return torch.argmax(prediction, dim=-3)


def roundtrip_label(spec: CodecSpec, label):
    """encode -> recover for discrete strategies; identity on valid labels.

    One-hot and analog bits threshold the encoding at zero; the embedding
    strategy picks the nearest (Euclidean) transformed table row.
    """
    if spec.strategy not in DISCRETE_STRATEGIES:
        raise ContractError("roundtrip_label is defined for discrete strategies only")
    labels = torch.as_tensor(label)
    scalar = labels.ndim == 0
    enc = encode(spec, labels.reshape(1, -1))  # (1, C, n) -> channels first
    enc = enc.movedim(-3, -1).reshape(-1, channels(spec))  # (n, C)
    if spec.strategy == "onehot":
        out = torch.argmax((enc > 0).to(torch.int64), dim=-1)
    elif spec.strategy == "analog_bits":
        bits = (enc > 0).to(torch.int64)
        shifts = torch.arange(spec.num_bits - 1, -1, -1)
        out = torch.sum(bits << shifts, dim=-1)
    else:
        rows = class_encodings(spec, dtype=enc.dtype)
        d2 = torch.cdist(enc.unsqueeze(0), rows.unsqueeze(0)).squeeze(0)
        out = torch.argmin(d2, dim=-1)
    out = out.reshape(labels.shape)
    return int(out) if scalar else out
