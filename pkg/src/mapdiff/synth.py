"""Deterministic synthetic datasets: colored-primitive segmentation scenes
and shaded heightfield depth scenes.

Every sample is a pure function of (spec, index): per-image RNGs are
spawned from the spec seed and the image index, so datasets are bitwise
reproducible and individual images can be regenerated in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ValidationError

# Base colors for shape classes 1..N (class 0 is the background); reused
# cyclically when K - 1 > len. Core shapes of classes 1 and 2 are red vs
# yellow, separated by more than the jitter range, so they are cleanly
# color-separable.
_CLASS_COLORS = np.array(
    [
        [0.85, 0.25, 0.20],  # red (boxy shapes)
        [0.85, 0.72, 0.20],  # yellow (elliptical shapes)
        [0.35, 0.45, 0.80],  # blue
        [0.40, 0.70, 0.35],  # green
        [0.70, 0.30, 0.70],  # purple
        [0.25, 0.70, 0.70],  # teal
    ]
)
_COLOR_JITTER = 0.15
_BACKGROUND = np.array([0.42, 0.42, 0.45])

# Shape outlines are alpha-feathered over ~this many pixels. Together
# with the additive pixel noise this makes the exact label contour
# irreducibly uncertain inside the feather band, so converged models
# keep genuinely ambiguous cells along every boundary.
_EDGE_SOFT = 4.0

# With probability _MORPH_P a class-1 or class-2 shape is a "morph": a
# canonical small superellipse in the exact red/yellow midpoint hue (a
# color core shapes never take). Morphs are identical up to position and
# pixel noise for both classes, so their label is an irreducible coin
# flip: the best reachable posterior is 50/50, which keeps sampled
# predictions flickering between the two classes. Everything except the
# position is fixed so the cluster cannot be memorized apart.
_MORPH_COLOR = np.array([0.85, 0.485, 0.20])
_MORPH_P = 0.05
_MORPH_EXP = 3.5
_MORPH_SIZE = 0.11

# Superellipse exponent ranges: |x/a|^n + |y/b|^n <= 1 is an ellipse at
# n = 2 and tends to a rectangle as n grows.
_RECT_N = (5.0, 12.0)
_DISK_N = (2.0, 2.6)

_TERRAIN = np.array([0.30, 0.55, 0.25])
_FOG = np.array([0.75, 0.85, 0.95])


class Dataset(NamedTuple):
    images: np.ndarray  # (N, 3, H, W) float32 in [0, 1]
    targets: np.ndarray  # labels (N, H, W) uint8 or depth (N, H, W) float32
    kind: str  # "segmentation" or "depth"


@dataclass(frozen=True)
class SegSpec:
    seed: int = 0
    count: int = 512
    size: int = 64
    num_classes: int = 4
    shapes_min: int = 2
    shapes_max: int = 3
    noise_std: float = 0.05

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValidationError("num_classes must be >= 2")
        if self.size < 16:
            raise ValidationError("size must be >= 16")
        if not 0 <= self.shapes_min <= self.shapes_max:
            raise ValidationError("need 0 <= shapes_min <= shapes_max")


@dataclass(frozen=True)
class DepthSpec:
    seed: int = 0
    count: int = 512
    size: int = 64
    max_depth: float = 10.0
    octaves: int = 4
    noise_std: float = 0.01

    def __post_init__(self):
        if self.max_depth <= 0:
            raise ValidationError("max_depth must be positive")
        if self.size < 16:
            raise ValidationError("size must be >= 16")
        if self.octaves < 1:
            raise ValidationError("octaves must be >= 1")


def _grids(size):
    ys, xs = np.mgrid[0:size, 0:size]
    return ys.astype(np.float64), xs.astype(np.float64)


def _shape_mask(kind, rng, size, ys, xs, morph=False):
    """Soft coverage in [0, 1]: 1 inside, 0 outside, a feathered ramp of
    ~_EDGE_SOFT px at the outline. The label contour sits at 0.5."""
    # Sizes stay >= ~size/4 so primitives survive 4x label downsampling
    # without the boundary band dominating their area.
    if kind in (0, 1):  # boxy (0) or elliptical (1) superellipse
        if morph:
            n = _MORPH_EXP
            a = b = size * _MORPH_SIZE
        else:
            n = rng.uniform(*(_RECT_N if kind == 0 else _DISK_N))
            a = rng.uniform(size * 0.15, size * 0.28)
            b = rng.uniform(size * 0.15, size * 0.28)
        cy = rng.uniform(b, size - b)
        cx = rng.uniform(a, size - a)
        v = (np.abs(ys - cy) / b) ** n + (np.abs(xs - cx) / a) ** n
        # (1 - v) in pixel units: radial slope of v at the outline is n
        # over the local radius, approximated by the mean semi-axis
        dist = (1.0 - v) * (a + b) / (2.0 * n)
        return np.clip(0.5 + dist / _EDGE_SOFT, 0.0, 1.0)
    # triangle: three vertices around a random center, signed edge
    # distances; the middle angle is pushed away from the others to
    # avoid slivers
    cy = rng.uniform(size * 0.3, size * 0.7)
    cx = rng.uniform(size * 0.3, size * 0.7)
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=3))
    angles[1] = np.clip(angles[1], angles[0] + 1.1, angles[2] - 1.1)
    radii = rng.uniform(size * 0.25, size * 0.42, size=3)
    vy = cy + radii * np.sin(angles)
    vx = cx + radii * np.cos(angles)
    dist = np.full((size, size), np.inf)
    for i in range(3):
        ay, ax = vy[i], vx[i]
        by, bx = vy[(i + 1) % 3], vx[(i + 1) % 3]
        cross = (bx - ax) * (ys - ay) - (by - ay) * (xs - ax)
        edge = max(np.hypot(by - ay, bx - ax), 1e-9)
        dist = np.minimum(dist, cross / edge)
    return np.clip(0.5 + dist / _EDGE_SOFT, 0.0, 1.0)


def seg_sample(spec: SegSpec, index: int):
    """One (image, labels) pair; later shapes occlude earlier ones."""
    rng = np.random.default_rng([spec.seed, index])
    ys, xs = _grids(spec.size)
    image = np.empty((spec.size, spec.size, 3))
    image[:] = _BACKGROUND + rng.uniform(-0.05, 0.05, size=3)
    labels = np.zeros((spec.size, spec.size), dtype=np.uint8)

    n_shapes = int(rng.integers(spec.shapes_min, spec.shapes_max + 1))
    for _ in range(n_shapes):
        shape_type = int(rng.integers(0, spec.num_classes - 1))
        morph = shape_type in (0, 1) and rng.random() < _MORPH_P
        alpha = _shape_mask(shape_type % 3, rng, spec.size, ys, xs, morph)
        if morph:
            color = _MORPH_COLOR
        else:
            color = _CLASS_COLORS[shape_type % len(_CLASS_COLORS)]
            color = color + rng.uniform(-_COLOR_JITTER, _COLOR_JITTER, size=3)
        image = alpha[..., None] * color + (1.0 - alpha[..., None]) * image
        labels[alpha > 0.5] = shape_type + 1

    image += rng.normal(0.0, spec.noise_std, size=image.shape)
    image = np.clip(image, 0.0, 1.0)
    return image.transpose(2, 0, 1).astype(np.float32), labels


def _value_noise(rng, size, octaves):
    """Sum of bilinearly interpolated random lattices, amplitude halving
    per octave; result roughly in [0, 1] before normalization."""
    field = np.zeros((size, size))
    amplitude = 1.0
    total = 0.0
    cells = 4
    for _ in range(octaves):
        lattice = rng.random((cells + 1, cells + 1))
        pos = np.linspace(0.0, cells, size, endpoint=False)
        i0 = np.floor(pos).astype(int)
        frac = pos - i0
        i1 = np.minimum(i0 + 1, cells)
        f00 = lattice[np.ix_(i0, i0)]
        f01 = lattice[np.ix_(i0, i1)]
        f10 = lattice[np.ix_(i1, i0)]
        f11 = lattice[np.ix_(i1, i1)]
        wy = frac[:, None]
        wx = frac[None, :]
        rows = (
            f00 * (1 - wy) * (1 - wx)
            + f01 * (1 - wy) * wx
            + f10 * wy * (1 - wx)
            + f11 * wy * wx
        )
        field += amplitude * rows
        total += amplitude
        amplitude *= 0.5
        cells = min(cells * 2, size)
    return field / total


def depth_sample(spec: DepthSpec, index: int):
    """One (image, depth) pair; brightness falls off with depth (fog), so
    absolute depth is recoverable from the image."""
    rng = np.random.default_rng([spec.seed, index, 1])
    height = _value_noise(rng, spec.size, spec.octaves)
    lo, hi = height.min(), height.max()
    height = (height - lo) / max(hi - lo, 1e-9)
    depth = spec.max_depth * (0.1 + 0.9 * height)

    # Lambert shading from the height gradient plus depth-dependent fog.
    gy, gx = np.gradient(height * spec.size * 0.5)
    normal_z = 1.0 / np.sqrt(gx**2 + gy**2 + 1.0)
    light = np.clip((-0.5 * gx - 0.5 * gy + 1.0) * normal_z, 0.0, 1.4)
    fog = np.exp(-depth / (0.6 * spec.max_depth))
    image = (
        _TERRAIN[:, None, None] * light[None] * fog[None]
        + _FOG[:, None, None] * (1.0 - fog[None])
    )
    image += rng.normal(0.0, spec.noise_std, size=image.shape)
    image = np.clip(image, 0.0, 1.0)
    return image.astype(np.float32), depth.astype(np.float32)


def gen_segmentation(spec: SegSpec) -> Dataset:
    images = np.empty((spec.count, 3, spec.size, spec.size), dtype=np.float32)
    labels = np.empty((spec.count, spec.size, spec.size), dtype=np.uint8)
    for i in range(spec.count):
        images[i], labels[i] = seg_sample(spec, i)
    return Dataset(images=images, targets=labels, kind="segmentation")


def gen_depth(spec: DepthSpec) -> Dataset:
    images = np.empty((spec.count, 3, spec.size, spec.size), dtype=np.float32)
    depths = np.empty((spec.count, spec.size, spec.size), dtype=np.float32)
    for i in range(spec.count):
        images[i], depths[i] = depth_sample(spec, i)
    return Dataset(images=images, targets=depths, kind="depth")


def train_val(config) -> tuple:
    """(train, val) datasets for an experiment config; val uses a shifted
    seed so the splits are disjoint by construction."""
    if config.task == "segmentation":
        def make(seed, count):
            return gen_segmentation(SegSpec(
                seed=seed, count=count, size=config.image_size,
                num_classes=config.num_classes, shapes_min=config.shapes_min,
                shapes_max=config.shapes_max, noise_std=config.noise_std))
    else:
        def make(seed, count):
            return gen_depth(DepthSpec(
                seed=seed, count=count, size=config.image_size,
                max_depth=config.max_depth, octaves=config.octaves))
    train = make(config.data_seed, config.train_count)
    val = make(config.data_seed + 77_000_001, config.val_count)
    return train, val
