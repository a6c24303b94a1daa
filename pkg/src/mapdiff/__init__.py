"""Conditional-diffusion dense prediction at desk scale.

Ground-truth maps are encoded as low-amplitude continuous signals,
corrupted with scheduled Gaussian noise, and a conditional decoder learns
to denoise them; at inference the image is encoded once and the decoder
iteratively refines pure noise into a segmentation or depth map, with the
step count chosen freely per call and per-pixel uncertainty read off the
refinement trajectory.
"""

from .codec import CodecSpec, channels, class_encodings, decode, encode
from .config import ExperimentConfig, apply_overrides, finalize, load_config
from .diffusion import SampleTrajectory, TimeSpec, corrupt, ddim_step, sample, time_pairs
from .errors import (
    ContractError,
    DomainError,
    FormatError,
    MapdiffError,
    TrainingDiverged,
    ValidationError,
)
from .model import Condition, DenoiserModel, ModelConfig, parameter_count
from .schedule import ScheduleParams, alpha_bar, coeffs, log_snr
from .training import (
    FitResult,
    evaluate,
    fit,
    load_checkpoint,
    loss_depth_silog,
    loss_segmentation,
    save_checkpoint,
)

__all__ = [
    "CodecSpec", "channels", "class_encodings", "decode", "encode",
    "ExperimentConfig", "apply_overrides", "finalize", "load_config",
    "SampleTrajectory", "TimeSpec", "corrupt", "ddim_step", "sample",
    "time_pairs", "MapdiffError", "ValidationError", "ContractError",
    "DomainError", "FormatError", "TrainingDiverged", "Condition",
    "DenoiserModel", "ModelConfig", "parameter_count", "ScheduleParams",
    "alpha_bar", "coeffs", "log_snr", "FitResult", "evaluate", "fit",
    "load_checkpoint", "loss_depth_silog", "loss_segmentation",
    "save_checkpoint",
]

__version__ = "0.1.0"
