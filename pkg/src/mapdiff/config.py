"""Experiment configuration: one flat record, a line-oriented file format,
and strict typed `--set key=value` overrides.

A config file holds `key = value` lines (# comments allowed). Every key
must name a known field and every value must parse at the field's type;
anything else is a validation error before any side effect happens.
"""

import os
from dataclasses import dataclass, fields, replace

from . import codec as codec_mod
from .diffusion import TimeSpec
from .errors import ValidationError
from .model import ModelConfig
from .schedule import ScheduleParams

TASKS = ("segmentation", "depth")
OBJECTIVES = ("task", "l2")


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "segmentation"
    # synthetic dataset
    data_seed: int = 0
    train_count: int = 512
    val_count: int = 64
    image_size: int = 64
    num_classes: int = 4
    shapes_min: int = 2
    shapes_max: int = 3
    noise_std: float = 0.25
    max_depth: float = 10.0
    octaves: int = 4
    # map encoding (depth task always uses the continuous codec)
    encoding: str = "embedding"
    scale: float = 0.01
    embed_dim: int = 8
    # noise schedule
    schedule: str = "cosine"
    # model
    cond_channels: int = 32
    encoder_width: int = 16
    decoder_depth: int = 6
    decoder_width: int = 32
    time_embed_dim: int = 32
    # sampling defaults
    steps: int = 3
    td: int = 1
    # optimization
    lr: float = 1e-3
    weight_decay: float = 0.05
    poly_power: float = 1.0
    total_steps: int = 5000
    self_aligned_steps: int = 500
    batch_size: int = 8
    eval_interval: int = 1000
    objective: str = "task"
    seed: int = 0
    output_dir: str = "runs/default"


_FIELD_TYPES = {f.name: type(f.default) for f in fields(ExperimentConfig)}


def as_dict(config: ExperimentConfig) -> dict:
    return {f.name: getattr(config, f.name) for f in fields(config)}


def parse_value(key: str, text: str):
    kind = _FIELD_TYPES.get(key)
    if kind is None:
        raise ValidationError(f"unknown config key {key!r}")
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ValidationError(
            f"config key {key!r} expects {kind.__name__}, got {text!r}"
        ) from None


def apply_overrides(config: ExperimentConfig, pairs) -> ExperimentConfig:
    """Apply `key=value` strings; later pairs win."""
    updates = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValidationError(f"override {pair!r} is not of the form key=value")
        key, _, text = pair.partition("=")
        key = key.strip()
        updates[key] = parse_value(key, text.strip())
    return replace(config, **updates)


def load_config(path) -> ExperimentConfig:
    updates = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key = value")
            key, _, text = line.partition("=")
            key = key.strip()
            updates[key] = parse_value(key, text.strip())
    return replace(ExperimentConfig(), **updates)


def config_text(config: ExperimentConfig) -> str:
    lines = [f"{f.name} = {getattr(config, f.name)}" for f in fields(config)]
    return "\n".join(lines) + "\n"


def save_config(config: ExperimentConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_text(config))


def finalize(config: ExperimentConfig) -> ExperimentConfig:
    """Cross-field validation; returns the config actually used for a run.

    The depth task pins the continuous codec, so a leftover discrete
    `encoding` value is overwritten rather than rejected.
    """
    if config.task not in TASKS:
        raise ValidationError(f"task must be one of {TASKS}, got {config.task!r}")
    if config.task == "depth" and config.encoding != "continuous":
        config = replace(config, encoding="continuous")
    if config.task == "segmentation":
        if config.encoding not in codec_mod.DISCRETE_STRATEGIES:
            raise ValidationError(
                f"segmentation encoding must be one of "
                f"{codec_mod.DISCRETE_STRATEGIES}, got {config.encoding!r}"
            )
        if not 2 <= config.num_classes <= 256:
            raise ValidationError("num_classes must lie in [2, 256]")
    if config.schedule not in ("cosine", "linear"):
        raise ValidationError(f"schedule must be cosine or linear, got {config.schedule!r}")
    if config.objective not in OBJECTIVES:
        raise ValidationError(f"objective must be one of {OBJECTIVES}")
    if config.image_size < 16 or config.image_size % 4:
        raise ValidationError("image_size must be >= 16 and a multiple of 4")
    if min(config.train_count, config.val_count) < 1:
        raise ValidationError("dataset counts must be positive")
    if config.shapes_min < 0 or config.shapes_min > config.shapes_max:
        raise ValidationError("need 0 <= shapes_min <= shapes_max")
    if config.noise_std < 0:
        raise ValidationError("noise_std must be >= 0")
    if config.max_depth <= 0:
        raise ValidationError("max_depth must be positive")
    if config.octaves < 1:
        raise ValidationError("octaves must be >= 1")
    if config.scale <= 0:
        raise ValidationError("scale must be positive")
    if config.embed_dim < 1:
        raise ValidationError("embed_dim must be >= 1")
    if config.total_steps < 0:
        raise ValidationError("total_steps must be >= 0")
    if not 0 <= config.self_aligned_steps <= config.total_steps:
        raise ValidationError("need 0 <= self_aligned_steps <= total_steps")
    if config.batch_size < 1 or config.eval_interval < 1:
        raise ValidationError("batch_size and eval_interval must be >= 1")
    if config.lr < 0 or config.weight_decay < 0:
        raise ValidationError("lr and weight_decay must be >= 0")
    TimeSpec(config.steps, config.td)  # validates
    schedule_params(config)  # validates
    base_codec(config)  # validates
    model_config(config)  # validates
    return config


def schedule_params(config: ExperimentConfig) -> ScheduleParams:
    return ScheduleParams(kind=config.schedule)


def base_codec(config: ExperimentConfig) -> codec_mod.CodecSpec:
    """Codec without a table; the embedding table is attached by its owner."""
    if config.task == "depth":
        return codec_mod.CodecSpec(strategy="continuous", scale=config.scale,
                                   max_value=config.max_depth)
    kwargs = {"strategy": config.encoding, "scale": config.scale,
              "num_classes": config.num_classes}
    if config.encoding == "embedding":
        kwargs["embed_dim"] = config.embed_dim
    return codec_mod.CodecSpec(**kwargs)


def model_config(config: ExperimentConfig) -> ModelConfig:
    codec = base_codec(config)
    if config.task == "depth":
        head, head_channels = "depth", 1
    else:
        head, head_channels = "segmentation", config.num_classes
    table_classes = table_dim = None
    if codec.strategy == "embedding":
        table_classes, table_dim = codec.num_classes, codec.embed_dim
    return ModelConfig(
        head=head,
        head_channels=head_channels,
        codec_channels=codec_mod.channels(codec),
        cond_channels=config.cond_channels,
        encoder_width=config.encoder_width,
        decoder_depth=config.decoder_depth,
        decoder_width=config.decoder_width,
        time_embed_dim=config.time_embed_dim,
        table_classes=table_classes,
        table_dim=table_dim,
        init_seed=config.seed,
    )


def time_spec(config: ExperimentConfig) -> TimeSpec:
    return TimeSpec(steps=config.steps, td=config.td)


def resolve_output_dir(config: ExperimentConfig) -> str:
    """output_dir, reparented under $MAPDIFF_OUTPUT_ROOT when that is set
    and the configured path is relative."""
    root = os.environ.get("MAPDIFF_OUTPUT_ROOT")
    if root and not os.path.isabs(config.output_dir):
        return os.path.join(root, config.output_dir)
    return config.output_dir
