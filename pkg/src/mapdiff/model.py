"""Decoupled conditioning network: heavy image encoder run once per image,
light map decoder run once per refinement step.

The encoder is a 4-stage strided pyramid (strides 4/8/16/32) fused top-down
and aggregated by a 1x1 convolution into a condition tensor at 1/4
resolution. The decoder concatenates the noisy map with that condition,
injects a sinusoidal embedding of the diffusion time into every residual
block, and projects to the task head (K logits or one normalized depth
channel). Both halves keep invocation counters so the once-per-image /
once-per-step cost split is checkable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ContractError, ValidationError


@dataclass(frozen=True)
class ModelConfig:
    head: str  # "segmentation" or "depth"
    head_channels: int
    codec_channels: int
    cond_channels: int = 32
    encoder_width: int = 16
    decoder_depth: int = 6
    decoder_width: int = 32
    time_embed_dim: int = 32
    table_classes: int | None = None  # K x d learnable label table, if any
    table_dim: int | None = None
    init_seed: int = 0

    def __post_init__(self):
        if self.head not in ("segmentation", "depth"):
            raise ValidationError(f"unknown head {self.head!r}")
        if self.head == "depth" and self.head_channels != 1:
            raise ValidationError("depth head has exactly 1 channel")
        if self.decoder_depth < 1:
            raise ValidationError("decoder depth must be >= 1")
        if min(self.head_channels, self.codec_channels, self.cond_channels,
               self.encoder_width, self.decoder_width, self.time_embed_dim) < 1:
            raise ValidationError("channel counts must be positive")
        if (self.table_classes is None) != (self.table_dim is None):
            raise ValidationError("table_classes and table_dim go together")


@dataclass
class Condition:
    """Encoder output for one image plus the sizes needed to undo padding."""

    features: torch.Tensor  # (1, C_cond, H'/4, W'/4)
    image_size: tuple  # (H, W) before padding
    padded_size: tuple  # (H', W'), both multiples of 4


def pad_to_multiple(images: torch.Tensor, multiple: int = 4):
    """Reflect-pad (B, C, H, W) on the bottom/right edges; returns
    (padded, (H, W))."""
    h, w = images.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        images = F.pad(images, (0, pw, 0, ph), mode="reflect")
    return images, (h, w)


def crop_to(maps: torch.Tensor, size: tuple) -> torch.Tensor:
    return maps[..., : size[0], : size[1]]


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(8, channels), channels)


def time_embedding(t, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Sinusoidal features of the diffusion time, shape (B, dim).

    t in [0,1] is stretched by 1000 so neighbouring times are separable at
    the usual frequency ladder.
    """
    t = torch.as_tensor(t, dtype=dtype).reshape(-1)
    half = dim // 2
    freqs = torch.exp(
        torch.arange(half, dtype=dtype) * (-math.log(10000.0) / max(half - 1, 1))
    )
    args = t[:, None] * 1000.0 * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class EncoderStage(nn.Module):
    """Strided 3x3 conv halving resolution, then one refining conv."""

    def __init__(self, cin, cout):
        super().__init__()
        self.down = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
        self.norm1 = _norm(cout)
        self.conv = nn.Conv2d(cout, cout, 3, padding=1)
        self.norm2 = _norm(cout)

    def forward(self, x):
        x = F.silu(self.norm1(self.down(x)))
        return F.silu(self.norm2(self.conv(x)))


class ImageEncoder(nn.Module):
    """4-stage pyramid fused top-down to a single 1/4-resolution tensor."""

    def __init__(self, width: int, cond_channels: int):
        super().__init__()
        widths = (width, width * 2, width * 4, width * 4)
        self.stem = EncoderStage(3, width)  # /2
        self.stages = nn.ModuleList(
            [
                EncoderStage(width, widths[0]),  # /4
                EncoderStage(widths[0], widths[1]),  # /8
                EncoderStage(widths[1], widths[2]),  # /16
                EncoderStage(widths[2], widths[3]),  # /32
            ]
        )
        self.laterals = nn.ModuleList(
            [nn.Conv2d(c, cond_channels, 1) for c in widths]
        )
        self.aggregate = nn.Conv2d(cond_channels, cond_channels, 1)

    def forward(self, images):
        x = self.stem(images)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        top = None
        for feat, lateral in zip(reversed(feats), reversed(self.laterals)):
            lat = lateral(feat)
            if top is not None:
                lat = lat + F.interpolate(top, size=lat.shape[-2:], mode="nearest")
            top = lat
        return self.aggregate(top)


# Time injection is deliberately weak: the corruption level is already
# visible in the map channels, so the embedding only needs to nudge the
# blocks, and a strong per-time shift lets each sampling time drift into
# its own slightly different network, which multi-step refinement then
# pays for on the final call. Adam makes the learned direction invariant
# to this gain, only the realized amplitude shrinks.
TIME_GATE = 0.1


class DecoderBlock(nn.Module):
    """Residual spatial conv with gated time injection, then a residual
    channel MLP."""

    def __init__(self, width: int, time_dim: int):
        super().__init__()
        self.norm1 = _norm(width)
        self.conv = nn.Conv2d(width, width, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, width)
        self.norm2 = _norm(width)
        self.fc1 = nn.Conv2d(width, width * 2, 1)
        self.fc2 = nn.Conv2d(width * 2, width, 1)

    def forward(self, x, temb):
        u = self.conv(F.silu(self.norm1(x)))
        x = x + u + TIME_GATE * self.time_proj(temb)[:, :, None, None]
        v = self.fc2(F.silu(self.fc1(F.silu(self.norm2(x)))))
        return x + v


class MapDecoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        w = config.decoder_width
        self.proj = nn.Conv2d(config.codec_channels + config.cond_channels, w, 3,
                              padding=1)
        self.time_mlp = nn.Sequential(
            nn.Linear(config.time_embed_dim, config.time_embed_dim),
            nn.SiLU(),
            nn.Linear(config.time_embed_dim, config.time_embed_dim),
        )
        self.blocks = nn.ModuleList(
            [DecoderBlock(w, config.time_embed_dim) for _ in range(config.decoder_depth)]
        )
        self.head_norm = _norm(w)
        self.head = nn.Conv2d(w, config.head_channels, 1)
        self.time_embed_dim = config.time_embed_dim

    def forward(self, noisy, cond_features, t):
        temb = time_embedding(t, self.time_embed_dim, dtype=noisy.dtype)
        if temb.shape[0] == 1 and noisy.shape[0] > 1:
            temb = temb.expand(noisy.shape[0], -1)
        temb = self.time_mlp(temb)
        x = self.proj(torch.cat([noisy, cond_features], dim=1))
        for block in self.blocks:
            x = block(x, temb)
        return self.head(F.silu(self.head_norm(x)))


class DenoiserModel(nn.Module):
    """Encoder + decoder pair with an optional learnable label table."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = ImageEncoder(config.encoder_width, config.cond_channels)
        self.decoder = MapDecoder(config)
        if config.table_classes is not None:
            g = torch.Generator().manual_seed(config.init_seed + 1)
            self.label_table = nn.Parameter(
                torch.randn(config.table_classes, config.table_dim, generator=g)
            )
        else:
            self.label_table = None
        self.encode_calls = 0
        self.decode_calls = 0
        _init_weights(self, config)

    def reset_counters(self):
        self.encode_calls = 0
        self.decode_calls = 0

    def forward_features(self, images: torch.Tensor) -> torch.Tensor:
        """Batched conditioning pass on pre-padded (B, 3, H', W') images."""
        if images.ndim != 4 or images.shape[1] != 3:
            raise ContractError("expected (B, 3, H, W) images")
        if images.shape[-2] % 4 or images.shape[-1] % 4:
            raise ContractError("image dims must be multiples of 4; pad first")
        self.encode_calls += 1
        return self.encoder(images)

    def encode_image(self, image: torch.Tensor) -> Condition:
        """Single-image conditioning; pads to a multiple of 4 internally."""
        if image.ndim == 3:
            image = image.unsqueeze(0)
        if image.ndim != 4 or image.shape[0] != 1 or image.shape[1] != 3:
            raise ContractError("expected one (3, H, W) image")
        padded, size = pad_to_multiple(image)
        features = self.forward_features(padded)
        return Condition(features=features, image_size=size,
                         padded_size=tuple(padded.shape[-2:]))

    def decode_map(self, noisy: torch.Tensor, condition, t) -> torch.Tensor:
        """One denoising query; `condition` is a Condition or a raw feature
        tensor (training path)."""
        features = condition.features if isinstance(condition, Condition) else condition
        if noisy.shape[-2:] != features.shape[-2:]:
            raise ContractError(
                f"noisy spatial dims {tuple(noisy.shape[-2:])} != condition "
                f"{tuple(features.shape[-2:])}"
            )
        self.decode_calls += 1
        return self.decoder(noisy, features, t)


def _init_weights(model: DenoiserModel, config: ModelConfig):
    """Fan-in scaled Gaussian everywhere, zero-init head; deterministic in
    init_seed. The depth head keeps a 0.5 bias so the first predictions sit
    mid-range instead of below the decode clamp where gradients vanish."""
    g = torch.Generator().manual_seed(config.init_seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.Conv2d, nn.Linear)):
                fan_in = module.weight.shape[1:].numel()
                std = 1.0 / math.sqrt(fan_in)
                noise = torch.randn(module.weight.shape, generator=g)
                module.weight.copy_(noise * std)
                if module.bias is not None:
                    module.bias.zero_()
        head = model.decoder.head
        head.weight.zero_()
        head.bias.zero_()
        if config.head == "depth":
            head.bias.fill_(0.5)
        # Zero-init time modulation: behavior may differ across times only
        # where training demands it, otherwise per-time init noise leaks into
        # multi-step refinement as error on the final step.
        for block in model.decoder.blocks:
            block.time_proj.weight.zero_()
        # Quiet map readout: sampling starts from unit noise while the encoded
        # map is two orders smaller, so a full-scale readout lets that noise
        # drive early feature statistics instead of perturbing logits mildly.
        model.decoder.proj.weight[:, : config.codec_channels].mul_(0.4)


def parameter_count(config: ModelConfig) -> int:
    """Trainable scalar count for a model built from `config`."""
    model = DenoiserModel(config)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
