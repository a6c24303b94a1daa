"""Command-line entry points.

Subcommands: train, sample, eval, ablate, plot. Exit codes: 0 success,
1 validation failure, 2 runtime failure, 3 I/O or format failure. Setting
MAPDIFF_OUTPUT_ROOT reparents every relative output directory.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np
import torch

from . import config as config_mod
from . import diffusion, formats, plots, synth, training
from .errors import FormatError, MapdiffError, ValidationError
from .model import parameter_count

ABLATION_AXES = ("scale", "schedule", "encoding", "decoder_depth", "steps")


def _load_config(args) -> config_mod.ExperimentConfig:
    if getattr(args, "config", None):
        cfg = config_mod.load_config(args.config)
    else:
        cfg = config_mod.ExperimentConfig()
    if getattr(args, "set", None):
        cfg = config_mod.apply_overrides(cfg, args.set)
    return config_mod.finalize(cfg)


def _print_record(record: dict):
    print(" ".join(f"{k}={v}" for k, v in record.items()))


def cmd_train(args) -> int:
    cfg = _load_config(args)
    result = training.fit(cfg, resume_from=args.resume, quiet=False)
    if result.records:
        _print_record(result.records[-1])
    print(f"checkpoint={result.final_path}")
    return 0


def _load_eval_inputs(args):
    """(state, dataset, time spec) shared by sample and eval."""
    state = training.load_checkpoint(args.checkpoint)
    cfg = state.config
    if getattr(args, "dataset", None):
        dataset = formats.read_dataset(args.dataset)
        task = "depth" if dataset.kind == "depth" else "segmentation"
        if task != cfg.task:
            raise FormatError(
                f"checkpoint task {cfg.task!r} does not match dataset kind "
                f"{dataset.kind!r}"
            )
    else:
        dataset = synth.train_val(cfg)[1]
    steps = args.steps if args.steps is not None else cfg.steps
    td = args.td if args.td is not None else cfg.td
    return state, dataset, diffusion.TimeSpec(steps=steps, td=td)


def cmd_sample(args) -> int:
    state, dataset, tspec = _load_eval_inputs(args)
    cfg = state.config
    model = state.model
    spec = training.live_codec(model, cfg)
    params = config_mod.schedule_params(cfg)
    out_dir = args.out or os.path.join(config_mod.resolve_output_dir(cfg), "samples")
    os.makedirs(out_dir, exist_ok=True)

    count = len(dataset.images) if args.count is None else min(
        args.count, len(dataset.images))
    is_depth = cfg.task == "depth"
    with torch.no_grad():
        for i in range(count):
            cond = model.encode_image(torch.from_numpy(dataset.images[i]))
            traj = diffusion.sample(cond, model.decode_map, spec, params, tspec,
                                    args.seed + i)
            pred = training.full_resolution(traj.final_raw, cond, spec)
            unc = training.full_resolution_uncertainty(traj.uncertainty, cond)
            steps_stack = torch.stack(traj.per_step_predictions).numpy()
            if is_depth:
                pred = pred.astype(np.float32)
                steps_stack = steps_stack.astype(np.float32)
            else:
                pred = pred.astype(np.uint8)
                steps_stack = steps_stack.astype(np.uint8)
            formats.write_array(os.path.join(out_dir, f"pred_{i:04d}.ddpa"), pred)
            formats.write_array(os.path.join(out_dir, f"traj_{i:04d}.ddpa"),
                                steps_stack)
            formats.write_array(os.path.join(out_dir, f"unc_{i:04d}.ddpa"),
                                unc.astype(np.float32))
            if args.palette:
                plots.save_map_image(
                    pred, os.path.join(out_dir, f"pred_{i:04d}.png"), cfg.task,
                    max_value=cfg.max_depth if is_depth else None)
    print(f"wrote {count} predictions to {out_dir} (steps={tspec.steps}, "
          f"td={tspec.td})")
    return 0


def cmd_eval(args) -> int:
    state, dataset, tspec = _load_eval_inputs(args)
    record = training.evaluate(state.model, state.config, dataset, tspec)
    record = {"checkpoint": args.checkpoint, "step": state.step, **record}
    _print_record(record)
    out = args.out or os.path.join(
        os.path.dirname(os.path.abspath(args.checkpoint)),
        f"eval_steps{tspec.steps}.txt")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(" ".join(f"{k}={v}" for k, v in record.items()) + "\n")
    return 0


def _axis_value(axis: str, text: str):
    field = "decoder_depth" if axis == "decoder_depth" else axis
    if axis == "steps":
        try:
            value = int(text)
        except ValueError:
            raise ValidationError(f"steps value {text!r} is not an integer") from None
        diffusion.TimeSpec(steps=value)
        return value
    return config_mod.parse_value(field, text)


def _ablate_worker(cfg_fields: dict) -> dict:
    cfg = config_mod.ExperimentConfig(**cfg_fields)
    start = time.perf_counter()
    result = training.fit(cfg)
    record = dict(result.records[-1]) if result.records else {}
    record["train_seconds"] = round(time.perf_counter() - start, 2)
    record["params"] = parameter_count(config_mod.model_config(cfg))
    record["checkpoint"] = result.final_path
    return record


def cmd_ablate(args) -> int:
    if args.axis not in ABLATION_AXES:
        raise ValidationError(f"axis must be one of {ABLATION_AXES}")
    cfg = _load_config(args)
    values = [_axis_value(args.axis, v) for v in args.values.split(",")]
    if not values:
        raise ValidationError("no ablation values given")
    out_dir = args.out or os.path.join(
        config_mod.resolve_output_dir(cfg), f"ablate_{args.axis}")
    os.makedirs(out_dir, exist_ok=True)

    rows = []
    if args.axis == "steps":
        # One checkpoint serves every step count.
        base = config_mod.finalize(replace(
            cfg, output_dir=os.path.join(cfg.output_dir, "ablate_steps_run")))
        record = _ablate_worker(config_mod.as_dict(base))
        state = training.load_checkpoint(record["checkpoint"])
        val = synth.train_val(base)[1]
        for value in values:
            ev = training.evaluate(state.model, base, val,
                                   diffusion.TimeSpec(steps=value, td=base.td))
            rows.append({"axis": "steps", "value": value, **ev,
                         "params": record["params"]})
    else:
        configs = []
        for value in values:
            sub = os.path.join(cfg.output_dir, f"ablate_{args.axis}",
                               str(value).replace("/", "_"))
            cfg_i = config_mod.finalize(replace(
                cfg, **{args.axis: value}, output_dir=sub))
            configs.append(config_mod.as_dict(cfg_i))
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                records = list(pool.map(_ablate_worker, configs))
        else:
            records = [_ablate_worker(c) for c in configs]
        for value, record in zip(values, records):
            rows.append({"axis": args.axis, "value": value, **record})

    keys = ["axis", "value"]
    for row in rows:
        keys += [k for k in row if k not in keys]
    table_path = os.path.join(out_dir, f"ablate_{args.axis}.csv")
    with open(table_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
    figure_path = os.path.join(out_dir, f"ablate_{args.axis}.png")
    plots.steps_curve(table_path, figure_path, x_key="value")
    for row in rows:
        _print_record(row)
    print(f"table={table_path}")
    print(f"figure={figure_path}")
    return 0


def cmd_plot(args) -> int:
    if args.kind == "steps_curve":
        if not args.input:
            raise ValidationError("steps_curve needs --input TABLE.csv")
        plots.steps_curve(args.input, args.out)
    else:
        if not args.uncertainty or not args.pred or not args.gt:
            raise ValidationError(
                "uncertainty_overlay needs --uncertainty, --pred and --gt")
        unc = formats.read_array(args.uncertainty)
        pred = formats.read_array(args.pred)
        gt = formats.read_array(args.gt)
        if pred.shape != gt.shape:
            raise FormatError("pred and gt shapes differ")
        if np.issubdtype(pred.dtype, np.floating):
            err = np.abs(pred.astype(np.float64) - gt) > args.threshold
        else:
            err = pred != gt
        image = formats.read_array(args.image) if args.image else None
        plots.uncertainty_overlay(unc, err, args.out, image=image)
    print(f"figure={args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mapdiff",
        description="Conditional-diffusion dense prediction: train, sample, "
                    "evaluate, ablate, plot.")
    sub = parser.add_subparsers(dest="command")

    def add_config_args(p):
        p.add_argument("--config", help="config file (key = value lines)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field (repeatable)")

    p = sub.add_parser("train", help="run the training schedule")
    add_config_args(p)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    def add_sampling_args(p):
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--dataset", help="dataset directory (default: the "
                       "config's synthetic validation split)")
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--td", type=int, default=None)

    p = sub.add_parser("sample", help="sample predictions from a checkpoint")
    add_sampling_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--out", help="output directory")
    p.add_argument("--palette", action="store_true",
                   help="also write viewable PNGs")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="run metrics over a validation set")
    add_sampling_args(p)
    p.add_argument("--out", help="record file path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train/evaluate along one config axis")
    add_config_args(p)
    p.add_argument("--axis", required=True, choices=ABLATION_AXES)
    p.add_argument("--values", required=True,
                   help="comma-separated values for the axis")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel training runs (independent output dirs)")
    p.add_argument("--out", help="table/figure output directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="render figures from existing records")
    p.add_argument("--kind", required=True,
                   choices=("steps_curve", "uncertainty_overlay"))
    p.add_argument("--input", help="ablation table (steps_curve)")
    p.add_argument("--uncertainty", help="uncertainty .ddpa (overlay)")
    p.add_argument("--pred", help="prediction .ddpa (overlay)")
    p.add_argument("--gt", help="ground-truth .ddpa (overlay)")
    p.add_argument("--image", help="input image .ddpa (overlay, optional)")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="depth error threshold for the overlay error mask")
    p.add_argument("--out", required=True, help="figure file path")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return 1
    try:
        return args.func(args) or 0
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except MapdiffError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
