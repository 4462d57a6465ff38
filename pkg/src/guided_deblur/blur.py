"""Synthetic sharp/blurry pair generation.

Sharp images are procedural compositions of anti-aliased shapes over a
smooth gradient background; blur comes from unit-mass linear motion
kernels applied with reflect padding, optionally followed by Gaussian
pixel noise. Everything is reproducible from integer seeds, and each
dataset carries a manifest from which it can be regenerated bit-exactly.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import images


@dataclass(frozen=True)
class BlurKernel:
    """2-D convolution kernel for linear motion blur.

    weights: odd-sized square array, nonnegative, summing to 1.
    length/angle: the motion segment the kernel rasterizes.
    """

    weights: np.ndarray
    length: float
    angle: float

    @property
    def size(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class GenerationConfig:
    """Parameter ranges for procedural pair generation."""

    seed: int
    size: int = 64
    length_range: tuple[float, float] = (3.0, 7.0)
    angle_range: tuple[float, float] = (0.0, math.pi)
    noise_std: float = 0.0

    def validate(self) -> None:
        lo, hi = self.length_range
        if not (1.0 <= lo <= hi):
            raise ValueError(f"invalid length_range {self.length_range}")
        if hi > self.size / 4:
            raise ValueError(
                f"max kernel length {hi} exceeds size/4 = {self.size / 4}"
            )
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.size < 8 or self.size % 8 != 0:
            raise ValueError("size must be >= 8 and divisible by 8")


# In-domain training blur and a shifted out-of-domain analogue
# (longer motion plus sensor noise).
TRAIN_CONFIG = GenerationConfig(seed=1234, size=64, length_range=(5.0, 9.0), noise_std=0.0)
SHIFTED_CONFIG = GenerationConfig(seed=5678, size=64, length_range=(11.0, 15.0), noise_std=0.02)

NAMED_CONFIGS = {"train": TRAIN_CONFIG, "shifted": SHIFTED_CONFIG}


@dataclass(frozen=True)
class PairRecord:
    """Manifest row: everything needed to regenerate one pair."""

    index: int
    seed: int
    length: float
    angle: float
    noise_std: float


@dataclass
class Dataset:
    """Ordered sharp/blurry pairs plus generation provenance."""

    pairs: list[tuple[np.ndarray, np.ndarray]]
    seed: int
    size: int
    manifest: list[PairRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)


def _smooth_coverage(signed_dist: np.ndarray) -> np.ndarray:
    # ~1px linear edge ramp: inside -> 1, outside -> 0.
    return np.clip(0.5 - signed_dist, 0.0, 1.0)


def gen_sharp_image(seed: int, size: int) -> np.ndarray:
    """Deterministic procedural RGB test image with edges at many orientations.

    Composites random anti-aliased rectangles, disks, and line strokes
    over a smooth two-color gradient background. Same (seed, size) gives
    a bit-identical image.
    """
    if size < 8 or size % 8 != 0:
        raise ValueError("size must be >= 8 and divisible by 8")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    # Gradient background between two random colors along a random direction.
    theta = rng.uniform(0.0, 2.0 * math.pi)
    proj = (xx * math.cos(theta) + yy * math.sin(theta)) / size
    proj = (proj - proj.min()) / max(proj.max() - proj.min(), 1e-12)
    c0 = rng.uniform(0.1, 0.9, size=3)
    c1 = rng.uniform(0.1, 0.9, size=3)
    img = proj[:, :, None] * c1 + (1.0 - proj[:, :, None]) * c0

    n_shapes = int(rng.integers(6, 12))
    for _ in range(n_shapes):
        kind = rng.choice(["rect", "disk", "stroke"])
        color = rng.uniform(0.0, 1.0, size=3)
        cx, cy = rng.uniform(0.1 * size, 0.9 * size, size=2)
        if kind == "disk":
            r = rng.uniform(0.04 * size, 0.18 * size)
            dist = np.hypot(xx - cx, yy - cy) - r
        elif kind == "rect":
            hx, hy = rng.uniform(0.05 * size, 0.2 * size, size=2)
            rot = rng.uniform(0.0, math.pi)
            dx = (xx - cx) * math.cos(rot) + (yy - cy) * math.sin(rot)
            dy = -(xx - cx) * math.sin(rot) + (yy - cy) * math.cos(rot)
            dist = np.maximum(np.abs(dx) - hx, np.abs(dy) - hy)
        else:  # stroke: capsule around a random segment
            ang = rng.uniform(0.0, math.pi)
            half = rng.uniform(0.1 * size, 0.35 * size)
            width = rng.uniform(0.5, 2.5)
            ax, ay = cx - half * math.cos(ang), cy - half * math.sin(ang)
            bx, by = cx + half * math.cos(ang), cy + half * math.sin(ang)
            px, py = xx - ax, yy - ay
            vx, vy = bx - ax, by - ay
            tproj = np.clip((px * vx + py * vy) / (vx * vx + vy * vy), 0.0, 1.0)
            dist = np.hypot(px - tproj * vx, py - tproj * vy) - width
        alpha = _smooth_coverage(dist)[:, :, None]
        img = img * (1.0 - alpha) + color[None, None, :] * alpha

    return np.clip(img, 0.0, 1.0)


def gen_motion_kernel(length: float, angle: float, size: int | None = None) -> BlurKernel:
    """Rasterize a unit-mass linear motion segment into a kernel grid.

    The segment is sampled at unit spacing (round(length) taps centered on
    the kernel), each tap depositing equal mass via bilinear splatting;
    length 1 degenerates to the identity kernel. If `size` is omitted the
    smallest odd grid containing all taps is used.
    """
    if length < 1.0:
        raise ValueError(f"motion length must be >= 1, got {length}")
    n_taps = max(1, int(round(length)))
    if n_taps == 1:
        if size is None:
            size = 1
        if size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {size}")
        weights = np.zeros((size, size), dtype=np.float64)
        weights[size // 2, size // 2] = 1.0
        return BlurKernel(weights=weights, length=float(length), angle=float(angle))

    dx, dy = math.cos(angle), math.sin(angle)
    offsets = np.arange(n_taps, dtype=np.float64) - (n_taps - 1) / 2.0
    xs = offsets * dx
    ys = offsets * dy

    reach = max(np.abs(xs).max(), np.abs(ys).max())
    min_size = 2 * (int(math.floor(reach)) + 1) + 1
    if size is None:
        size = min_size
    if size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    if size < min_size:
        raise ValueError(
            f"length {length} exceeds kernel support: need size >= {min_size}, got {size}"
        )

    center = size // 2
    weights = np.zeros((size, size), dtype=np.float64)
    mass = 1.0 / n_taps
    for x, y in zip(xs + center, ys + center):
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - x0, y - y0
        weights[y0, x0] += mass * (1 - fx) * (1 - fy)
        weights[y0, x0 + 1] += mass * fx * (1 - fy)
        weights[y0 + 1, x0] += mass * (1 - fx) * fy
        weights[y0 + 1, x0 + 1] += mass * fx * fy

    weights /= weights.sum()
    return BlurKernel(weights=weights, length=float(length), angle=float(angle))


def apply_blur(
    img: np.ndarray,
    kern: BlurKernel,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Blur an image with a motion kernel (reflect padding) plus pixel noise.

    Output is clamped to [0, 1]. When noise_std > 0 an rng must be given.
    """
    arr = images.check_image(img)
    if kern.size > min(arr.shape[0], arr.shape[1]):
        raise ValueError(f"kernel size {kern.size} does not fit image {arr.shape[:2]}")
    out = np.empty_like(arr)
    for c in range(arr.shape[2]):
        out[:, :, c] = ndimage.correlate(arr[:, :, c], kern.weights, mode="reflect")
    if noise_std > 0.0:
        if rng is None:
            raise ValueError("noise_std > 0 requires an rng")
        out = out + rng.normal(0.0, noise_std, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def _quantize(img: np.ndarray) -> np.ndarray:
    # Snap to the 8-bit lattice so the PNG layout serializes pairs losslessly.
    return np.floor(img * 255.0 + 0.5) / 255.0


def _generate_pair(record: PairRecord, size: int) -> tuple[np.ndarray, np.ndarray]:
    sharp = gen_sharp_image(record.seed, size)
    kern = gen_motion_kernel(record.length, record.angle)
    noise_rng = np.random.default_rng([record.seed, 2])
    blur = apply_blur(sharp, kern, record.noise_std, noise_rng)
    return _quantize(sharp), _quantize(blur)


def make_dataset(config: GenerationConfig, n: int) -> Dataset:
    """Generate n pairs with per-pair seeds seed^i; manifest records each draw."""
    if n < 1:
        raise ValueError("n must be >= 1")
    config.validate()
    records = []
    for i in range(n):
        pair_seed = config.seed ^ i
        params_rng = np.random.default_rng([pair_seed, 1])
        length = float(params_rng.uniform(*config.length_range))
        angle = float(params_rng.uniform(*config.angle_range))
        records.append(PairRecord(i, pair_seed, length, angle, config.noise_std))
    pairs = [_generate_pair(rec, config.size) for rec in records]
    return Dataset(pairs=pairs, seed=config.seed, size=config.size, manifest=records)


def regenerate_dataset(manifest: list[PairRecord], seed: int, size: int) -> Dataset:
    """Rebuild a dataset bit-exactly from its manifest rows."""
    pairs = [_generate_pair(rec, size) for rec in manifest]
    return Dataset(pairs=pairs, seed=seed, size=size, manifest=list(manifest))


def save_dataset(ds: Dataset, directory) -> None:
    """Write pairs/NNNN_{sharp,blur}.png plus manifest.json under `directory`."""
    root = Path(directory)
    pair_dir = root / "pairs"
    os.makedirs(pair_dir, exist_ok=True)
    for rec, (sharp, blur) in zip(ds.manifest, ds.pairs):
        images.save_image(sharp, pair_dir / f"{rec.index:04d}_sharp.png")
        images.save_image(blur, pair_dir / f"{rec.index:04d}_blur.png")
    manifest = {
        "seed": ds.seed,
        "size": ds.size,
        "pairs": [
            {
                "index": rec.index,
                "seed": rec.seed,
                "length": rec.length,
                "angle": rec.angle,
                "noise_std": rec.noise_std,
            }
            for rec in ds.manifest
        ],
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_dataset(directory) -> Dataset:
    """Load a dataset directory written by save_dataset."""
    root = Path(directory)
    with open(root / "manifest.json") as fh:
        manifest = json.load(fh)
    records = [
        PairRecord(p["index"], p["seed"], p["length"], p["angle"], p["noise_std"])
        for p in manifest["pairs"]
    ]
    pairs = []
    for rec in records:
        sharp = images.load_image(root / "pairs" / f"{rec.index:04d}_sharp.png")
        blur = images.load_image(root / "pairs" / f"{rec.index:04d}_blur.png")
        pairs.append((sharp, blur))
    return Dataset(pairs=pairs, seed=manifest["seed"], size=manifest["size"], manifest=records)
