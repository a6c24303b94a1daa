"""Training loop: corrupt encoded ground truth at random times, ask the
decoder to undo it, step the optimizer; plus the late self-aligned phase
that corrupts the model's own detached predictions so training matches
what sampling actually feeds the decoder.

Everything downstream of the dataset is a deterministic function of
(config, seed): batch indices, per-element times, and noise all come from
one checkpointed generator, so an interrupted run resumed from disk
reproduces the uninterrupted loss sequence bitwise.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, fields

import numpy as np
import torch
import torch.nn.functional as F

from . import codec as codec_mod
from . import config as config_mod
from . import diffusion, formats, metrics, synth
from .errors import ContractError, DomainError, FormatError, TrainingDiverged
from .model import Condition, DenoiserModel, pad_to_multiple

SILOG_LAMBDA = 0.85
SILOG_ALPHA = 10.0
DEPTH_FLOOR = codec_mod.DEPTH_FLOOR


def loss_segmentation(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel cross-entropy; label 255 is ignored."""
    labels = labels.long()
    if not (labels != metrics.IGNORE_LABEL).any():
        raise ContractError("all pixels ignored")
    return F.cross_entropy(logits, labels, ignore_index=metrics.IGNORE_LABEL)


def loss_depth_silog(pred: torch.Tensor, gt: torch.Tensor,
                     lambda_si: float = SILOG_LAMBDA,
                     alpha_scale: float = SILOG_ALPHA,
                     valid_mask=None) -> torch.Tensor:
    """alpha * sqrt(mean(d^2) - lambda * mean(d)^2) with d = log pred - log gt."""
    if valid_mask is not None:
        pred = pred[valid_mask]
        gt = gt[valid_mask]
    if torch.any(pred <= 0) or torch.any(gt <= 0):
        raise DomainError("silog needs positive pred and gt")
    d = torch.log(pred) - torch.log(gt)
    var = torch.mean(d * d) - lambda_si * torch.mean(d) ** 2
    return alpha_scale * torch.sqrt(torch.clamp(var, min=0.0))


def _st_clamp(x: torch.Tensor, lo: float, hi: float) -> torch.Tensor:
    """Clamp with a straight-through gradient so out-of-range pixels keep
    pulling toward the valid band instead of going dead."""
    return x + (x.clamp(lo, hi) - x).detach()


def predicted_depth(raw: torch.Tensor, max_value: float) -> torch.Tensor:
    """Training-time head output -> positive depth (straight-through clamp)."""
    return _st_clamp(raw.squeeze(-3), DEPTH_FLOOR, 1.0) * max_value


def soft_encoding(spec: codec_mod.CodecSpec, raw: torch.Tensor) -> torch.Tensor:
    """Expected encoding under the head's own distribution; used by the
    plain-l2 objective so both objectives share head shapes."""
    if spec.strategy == "continuous":
        return (_st_clamp(raw, DEPTH_FLOOR, 1.0) * 2.0 - 1.0) * spec.scale
    probs = torch.softmax(raw, dim=-3)
    rows = codec_mod.class_encodings(spec, dtype=raw.dtype)
    return torch.einsum("bkhw,kc->bchw", probs, rows)


def downsample_targets(targets: torch.Tensor, kind: str) -> torch.Tensor:
    """GT at 1/4 resolution: nearest for labels, bilinear for depth.

    Labels are sampled at the latent-cell centers (offset 2), matching
    where bilinear upsampling of the logits places each cell; corner
    sampling would shift every boundary by ~1.5 px."""
    if kind == "segmentation":
        return targets[..., 2::4, 2::4]
    down = F.interpolate(targets.unsqueeze(1), scale_factor=0.25,
                         mode="bilinear", align_corners=False)
    return down.squeeze(1)


@dataclass
class TrainState:
    model: DenoiserModel
    optimizer: torch.optim.Optimizer
    generator: torch.Generator
    config: config_mod.ExperimentConfig
    step: int = 0

    @property
    def phase(self) -> str:
        switch = self.config.total_steps - self.config.self_aligned_steps
        if self.config.self_aligned_steps > 0 and self.step >= switch:
            return "self_aligned"
        return "standard"


def build_state(config: config_mod.ExperimentConfig) -> TrainState:
    config = config_mod.finalize(config)
    model = DenoiserModel(config_mod.model_config(config))
    # The input projection carries the noisy map into the decoder. Nothing
    # in the objective sustains it once the map stops being informative, so
    # plain decay would kill it before the end of training and with it the
    # refinement and uncertainty behavior of the sampler. Exempt it.
    exempt = {"decoder.proj.weight", "decoder.proj.bias"}
    decayed = [p for n, p in model.named_parameters() if n not in exempt]
    kept = [p for n, p in model.named_parameters() if n in exempt]
    optimizer = torch.optim.AdamW(
        [{"params": decayed},
         {"params": kept, "weight_decay": 0.0}],
        lr=config.lr, weight_decay=config.weight_decay)
    generator = torch.Generator().manual_seed(config.seed)
    return TrainState(model=model, optimizer=optimizer, generator=generator,
                      config=config)


def live_codec(state_or_model, config) -> codec_mod.CodecSpec:
    """Codec spec wired to the model's learnable table when one exists."""
    model = state_or_model.model if isinstance(state_or_model, TrainState) else state_or_model
    spec = config_mod.base_codec(config)
    if spec.strategy == "embedding":
        spec = codec_mod.with_table(spec, model.label_table)
    return spec


def _task_loss(config, spec, raw, targets_q, enc_gt):
    if config.objective == "l2":
        return F.mse_loss(soft_encoding(spec, raw), enc_gt)
    if config.task == "segmentation":
        return loss_segmentation(raw, targets_q)
    return loss_depth_silog(predicted_depth(raw, spec.max_value), targets_q)


def _denoise_loss(state: TrainState, images: torch.Tensor,
                  targets_q: torch.Tensor, first_pass: bool) -> torch.Tensor:
    config = state.config
    model = state.model
    g = state.generator
    params = config_mod.schedule_params(config)
    spec = live_codec(state, config)

    feats = model.forward_features(images)
    corruption_target = targets_q
    if first_pass:
        # Denoise pure noise at t=1, then train against a corruption of that
        # detached prediction; the loss target stays the true GT.
        shape = (images.shape[0], codec_mod.channels(spec),
                 feats.shape[-2], feats.shape[-1])
        seed_noise = torch.randn(shape, generator=g)
        with torch.no_grad():
            first_raw = model.decode_map(seed_noise, feats, 1.0)
        decoded = codec_mod.decode(spec, first_raw)
        corruption_target = decoded.detach()

    enc = codec_mod.encode(spec, corruption_target)
    t = torch.rand(images.shape[0], generator=g, dtype=torch.float64)
    eps = torch.randn(enc.shape, generator=g)
    noisy = diffusion.corrupt(params, enc, t, eps)
    raw = model.decode_map(noisy, feats, t)
    enc_gt = enc if not first_pass else codec_mod.encode(spec, targets_q)
    return _task_loss(config, spec, raw, targets_q, enc_gt)


def _apply_update(state: TrainState, loss: torch.Tensor) -> float:
    if not torch.isfinite(loss):
        raise TrainingDiverged(
            f"non-finite loss at step {state.step}; lower lr or signal scale"
        )
    config = state.config
    frac = state.step / max(config.total_steps, 1)
    lr = config.lr * (1.0 - frac) ** config.poly_power
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()
    state.step += 1
    return float(loss.detach())


def train_step(state: TrainState, images, targets_q) -> float:
    loss = _denoise_loss(state, images, targets_q, first_pass=False)
    return _apply_update(state, loss)


def self_aligned_step(state: TrainState, images, targets_q) -> float:
    loss = _denoise_loss(state, images, targets_q, first_pass=True)
    return _apply_update(state, loss)


def _eval_seed(seed: int, index: int) -> int:
    return (seed * 1_000_003 + index * 7_919 + 12_345) % (2**31)


def full_resolution(raw: torch.Tensor, cond: Condition,
                    spec: codec_mod.CodecSpec) -> np.ndarray:
    """Head output at latent resolution -> decoded full-resolution map.

    Logits (or normalized depth) are upsampled bilinearly, cropped to the
    original size, then decoded; sharper boundaries than upsampling the
    decoded map itself."""
    raw_full = F.interpolate(raw.unsqueeze(0), size=cond.padded_size,
                             mode="bilinear", align_corners=False)
    raw_full = raw_full[..., : cond.image_size[0], : cond.image_size[1]]
    if spec.strategy == "continuous":
        return (raw_full[0, 0].clamp(DEPTH_FLOOR, 1.0) * spec.max_value).numpy()
    return torch.argmax(raw_full[0], dim=0).numpy()


def full_resolution_uncertainty(uncertainty: torch.Tensor,
                                cond: Condition) -> np.ndarray:
    # bilinear like the raw maps: uncertainty is continuous-valued
    unc = F.interpolate(uncertainty[None, None].float(), size=cond.padded_size,
                        mode="bilinear", align_corners=False)
    return unc[0, 0, : cond.image_size[0], : cond.image_size[1]].numpy()


def evaluate(model: DenoiserModel, config, dataset: synth.Dataset,
             time_spec: diffusion.TimeSpec | None = None,
             max_images: int | None = None) -> dict:
    """Sample every image, upsample the final head output to full
    resolution, and accumulate task metrics plus uncertainty agreement."""
    if len(dataset.images) == 0:
        raise ContractError("empty evaluation dataset")
    params = config_mod.schedule_params(config)
    spec = live_codec(model, config)
    tspec = time_spec or config_mod.time_spec(config)
    count = len(dataset.images) if max_images is None else min(
        max_images, len(dataset.images))

    cm = np.zeros((config.num_classes, config.num_classes), dtype=np.int64)
    depth_pred_all, depth_gt_all = [], []
    agreements = []
    start = time.perf_counter()
    decode_calls_before = model.decode_calls
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for lo in range(0, count, 16):
            hi = min(lo + 16, count)
            images = torch.from_numpy(dataset.images[lo:hi])
            padded, size = pad_to_multiple(images)
            feats = model.forward_features(padded)
            for j in range(hi - lo):
                cond = Condition(features=feats[j : j + 1], image_size=size,
                                 padded_size=tuple(padded.shape[-2:]))
                traj = diffusion.sample(cond, model.decode_map, spec, params,
                                        tspec, _eval_seed(config.seed, lo + j))
                pred = full_resolution(traj.final_raw, cond, spec)
                unc_full = full_resolution_uncertainty(traj.uncertainty, cond)
                gt = dataset.targets[lo + j]
                if dataset.kind == "segmentation":
                    cm += metrics.confusion_matrix(gt, pred, config.num_classes)
                    err = pred != gt
                else:
                    depth_pred_all.append(pred.reshape(-1))
                    depth_gt_all.append(gt.reshape(-1))
                    err = np.abs(pred - gt) > (
                        diffusion.DEPTH_UNCERTAINTY_FRACTION * config.max_depth)
                agreements.append(metrics.uncertainty_agreement(unc_full, err))
    if was_training:
        model.train()

    elapsed = time.perf_counter() - start
    out = {
        "images": count,
        "steps": tspec.steps,
        "td": tspec.td,
        "seconds_per_image": elapsed / count,
        "decoder_calls_per_image": (model.decode_calls - decode_calls_before) / count,
        "uncertainty_corr": float(np.mean(agreements)),
    }
    if dataset.kind == "segmentation":
        _, mean_iou = metrics.miou(cm)
        out["miou"] = mean_iou
        out["macc"] = metrics.mean_accuracy(cm)
    else:
        dm = metrics.depth_metrics(np.concatenate(depth_pred_all),
                                   np.concatenate(depth_gt_all))
        out.update({f.name: getattr(dm, f.name) for f in fields(dm)})
    return out


def save_checkpoint(path, state: TrainState):
    arrays = {"rng": state.generator.get_state().numpy().astype(np.uint8)}
    opt_steps = {}
    for name, param in state.model.named_parameters():
        arrays[f"param/{name}"] = param.detach().numpy()
        opt = state.optimizer.state.get(param)
        if opt:
            arrays[f"opt/exp_avg/{name}"] = opt["exp_avg"].numpy()
            arrays[f"opt/exp_avg_sq/{name}"] = opt["exp_avg_sq"].numpy()
            opt_steps[name] = int(opt["step"])
    manifest = {
        "kind": "checkpoint",
        "config": config_mod.as_dict(state.config),
        "step": state.step,
        "phase": state.phase,
        "opt_steps": opt_steps,
    }
    formats.write_container(path, manifest, arrays)


def load_checkpoint(path) -> TrainState:
    manifest, arrays = formats.read_container(path)
    if manifest.get("kind") != "checkpoint":
        raise FormatError(f"{path} is not a checkpoint container")
    config = config_mod.ExperimentConfig(**manifest["config"])
    state = build_state(config)
    state.step = int(manifest["step"])
    for name, param in state.model.named_parameters():
        key = f"param/{name}"
        if key not in arrays:
            raise FormatError(f"checkpoint missing tensor {name}")
        stored = arrays[key]
        if tuple(stored.shape) != tuple(param.shape):
            raise FormatError(
                f"shape mismatch for {name}: checkpoint {tuple(stored.shape)} "
                f"vs model {tuple(param.shape)}"
            )
        with torch.no_grad():
            param.copy_(torch.from_numpy(stored))
        if name in manifest["opt_steps"]:
            state.optimizer.state[param] = {
                "step": torch.tensor(float(manifest["opt_steps"][name])),
                "exp_avg": torch.from_numpy(arrays[f"opt/exp_avg/{name}"].copy()),
                "exp_avg_sq": torch.from_numpy(arrays[f"opt/exp_avg_sq/{name}"].copy()),
            }
    state.generator.set_state(torch.from_numpy(arrays["rng"]))
    return state


@dataclass
class FitResult:
    state: TrainState
    records: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    out_dir: str = ""
    final_path: str = ""
    best_path: str = ""


def _primary_metric(record: dict) -> float:
    return record.get("miou", record.get("delta1", 0.0))


def fit(config: config_mod.ExperimentConfig, resume_from=None,
        until_step=None, quiet=True) -> FitResult:
    """Run the training schedule, evaluating and checkpointing on the way.

    `until_step` stops early (for later resume); the phase switch and the
    learning-rate decay always follow config.total_steps.
    """
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        config = state.config
    else:
        config = config_mod.finalize(config)
        state = build_state(config)

    out_dir = config_mod.resolve_output_dir(config)
    os.makedirs(out_dir, exist_ok=True)
    config_mod.save_config(config, os.path.join(out_dir, "config.txt"))
    final_path = os.path.join(out_dir, "final.ddpc")
    best_path = os.path.join(out_dir, "best.ddpc")
    log_path = os.path.join(out_dir, "training.log")

    train_data, val_data = synth.train_val(config)
    images = torch.from_numpy(train_data.images)
    if config.task == "segmentation":
        targets = torch.from_numpy(train_data.targets.astype(np.int64))
    else:
        targets = torch.from_numpy(train_data.targets)
    targets_q = downsample_targets(targets, train_data.kind)

    stop = config.total_steps if until_step is None else min(
        until_step, config.total_steps)
    result = FitResult(state=state, out_dir=out_dir, final_path=final_path,
                       best_path=best_path)
    best = -float("inf")

    def run_eval():
        nonlocal best
        record = {"step": state.step, "phase": state.phase,
                  "loss": result.losses[-1] if result.losses else float("nan")}
        record.update(evaluate(state.model, config, val_data))
        result.records.append(record)
        line = " ".join(f"{k}={v}" for k, v in record.items())
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        if not quiet:
            print(line, flush=True)
        if _primary_metric(record) > best:
            best = _primary_metric(record)
            save_checkpoint(best_path, state)

    n = len(images)
    while state.step < stop:
        idx = torch.randint(0, n, (config.batch_size,), generator=state.generator)
        batch_images = images[idx]
        batch_targets = targets_q[idx]
        if state.phase == "self_aligned":
            loss = self_aligned_step(state, batch_images, batch_targets)
        else:
            loss = train_step(state, batch_images, batch_targets)
        result.losses.append(loss)
        if state.step % config.eval_interval == 0 or state.step == stop:
            run_eval()

    if config.total_steps == 0:
        # Degenerate budget: still leave a checkpoint of initialized weights.
        open(log_path, "a", encoding="utf-8").close()
    save_checkpoint(final_path, state)
    if not os.path.exists(best_path):
        save_checkpoint(best_path, state)
    return result
