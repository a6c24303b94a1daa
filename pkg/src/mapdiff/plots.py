"""Figure rendering for reports: metric-vs-steps curves and
uncertainty/error overlays. Pure presentation; every number plotted comes
from a record produced elsewhere."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import FormatError

# Fixed label colors (class index -> RGB), background first.
PALETTE = np.array(
    [
        [0.20, 0.20, 0.22],
        [0.85, 0.20, 0.15],
        [0.15, 0.70, 0.25],
        [0.20, 0.35, 0.90],
        [0.90, 0.80, 0.15],
        [0.70, 0.25, 0.80],
        [0.15, 0.75, 0.75],
        [0.95, 0.55, 0.15],
    ]
)


def label_image(labels: np.ndarray) -> np.ndarray:
    """(H, W) labels -> (H, W, 3) RGB using the fixed palette, cycled."""
    return PALETTE[np.asarray(labels, dtype=np.int64) % len(PALETTE)]


def read_table(path) -> list:
    """CSV with a header row -> list of dicts (strings preserved)."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError:
        raise
    if not rows:
        raise FormatError(f"no data rows in {path}")
    return rows


def steps_curve(table_path, out_path, x_key=None, y_key=None):
    """Line plot of a metric against an ablation value from an ablate CSV."""
    rows = read_table(table_path)
    keys = list(rows[0].keys())
    x_key = x_key or ("value" if "value" in keys else keys[0])
    if y_key is None:
        for candidate in ("miou", "delta1", "metric"):
            if candidate in keys:
                y_key = candidate
                break
        else:
            raise FormatError(f"no known metric column in {keys}")
    try:
        ys = [float(r[y_key]) for r in rows]
        raw_xs = [r[x_key] for r in rows]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad table {table_path}: {exc}") from None
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    try:
        xs = np.asarray([float(x) for x in raw_xs])
        order = np.argsort(xs)
        ax.plot(xs[order], np.asarray(ys)[order], marker="o")
    except ValueError:
        # categorical axis (encoding or schedule names)
        ax.bar(range(len(raw_xs)), ys)
        ax.set_xticks(range(len(raw_xs)), raw_xs)
        ax.set_ylim(min(ys) * 0.9, max(ys) * 1.02 + 1e-6)
    ax.set_xlabel(x_key)
    ax.set_ylabel(y_key)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def uncertainty_overlay(uncertainty: np.ndarray, error_mask: np.ndarray,
                        out_path, image: np.ndarray | None = None):
    """Side-by-side panels: optional input image, uncertainty heat map,
    binary error map."""
    if uncertainty.shape != error_mask.shape:
        raise FormatError("uncertainty and error map shapes differ")
    panels = []
    if image is not None:
        panels.append(("image", np.moveaxis(image, 0, -1), None))
    panels.append(("uncertainty", uncertainty, "magma"))
    panels.append(("error", error_mask.astype(float), "gray"))
    fig, axes = plt.subplots(1, len(panels), figsize=(3.0 * len(panels), 3.2))
    if len(panels) == 1:
        axes = [axes]
    for ax, (title, data, cmap) in zip(axes, panels):
        ax.imshow(np.clip(data, 0, 1), cmap=cmap, vmin=0, vmax=1)
        ax.set_title(title)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def save_map_image(pred: np.ndarray, out_path, kind: str, max_value=None):
    """Human-viewable export of a decoded map (palette PNG or depth colormap)."""
    if kind == "segmentation":
        plt.imsave(out_path, label_image(pred))
    else:
        top = max_value or float(np.max(pred)) or 1.0
        plt.imsave(out_path, np.asarray(pred) / top, cmap="viridis", vmin=0, vmax=1)


def training_curves(records: list, out_path):
    """Metric-over-steps line plot from fit eval records."""
    if not records:
        raise FormatError("no eval records to plot")
    xs = [r["step"] for r in records]
    key = "miou" if "miou" in records[0] else "delta1"
    ys = [r[key] for r in records]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(xs, ys, marker="o")
    ax.set_xlabel("step")
    ax.set_ylabel(key)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
