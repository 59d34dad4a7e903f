"""Synthetic multi-scale shape segmentation data.

Class 0 is the textured background. Classes 1..3 are rectangles, ellipses
and thin bars (1-3 px wide, any orientation); when K > 4 the extra classes
are triangles, rings, crosses and diamonds, cycled. Shape extents are drawn
log-uniformly between 2 px and h/2. Each class has its own hue band so that
colour is a weak cue; shape and extent carry the rest.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional

import numpy as np

from .data_io import DataError, Manifest, SegSample, write_manifest, write_sample

BASE_KINDS = ("rect", "ellipse", "bar")
EXTRA_KINDS = ("triangle", "ring", "cross", "diamond")


def shape_kind(cls: int) -> str:
    if cls < 1:
        raise ValueError("class 0 is background")
    if cls <= len(BASE_KINDS):
        return BASE_KINDS[cls - 1]
    return EXTRA_KINDS[(cls - 1 - len(BASE_KINDS)) % len(EXTRA_KINDS)]


def _log_uniform(rng, lo: float, hi: float) -> float:
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def _hsv_to_rgb(h: float, s: float, v: float) -> np.ndarray:
    i = int(h * 6) % 6
    f = h * 6 - math.floor(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return np.array([(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i], np.float32)


def _class_colour(rng, cls: int, num_classes: int) -> np.ndarray:
    band = 1.0 / (num_classes - 1)
    hue = (cls - 1) * band + rng.uniform(0.15, 0.85) * band
    return _hsv_to_rgb(hue % 1.0, rng.uniform(0.55, 1.0), rng.uniform(0.55, 1.0))


def _mask(kind: str, rng, yy: np.ndarray, xx: np.ndarray, h: int, w: int) -> np.ndarray:
    lo, hi = 2.0, h / 2
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    if kind == "rect":
        sy, sx = _log_uniform(rng, lo, hi), _log_uniform(rng, lo, hi)
        return (np.abs(yy - cy) <= sy / 2) & (np.abs(xx - cx) <= sx / 2)
    if kind == "ellipse":
        ry, rx = _log_uniform(rng, lo, hi) / 2, _log_uniform(rng, lo, hi) / 2
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    if kind == "bar":
        length = _log_uniform(rng, max(lo, 4.0), hi)
        width = int(rng.integers(1, 4))
        theta = rng.uniform(0, math.pi)
        dy, dx = math.sin(theta), math.cos(theta)
        along = (yy - cy) * dy + (xx - cx) * dx
        across = -(yy - cy) * dx + (xx - cx) * dy
        return (np.abs(along) <= length / 2) & (np.abs(across) < width / 2)
    size = _log_uniform(rng, max(lo, 4.0), hi) / 2
    u, v = (yy - cy) / size, (xx - cx) / size
    if kind == "triangle":
        return (u <= 1) & (u >= 2 * np.abs(v) - 1)
    if kind == "ring":
        r = np.sqrt(u * u + v * v)
        return (r <= 1) & (r >= 0.55)
    if kind == "cross":
        return ((np.abs(u) <= 1) & (np.abs(v) <= 0.3)) | ((np.abs(v) <= 1) & (np.abs(u) <= 0.3))
    if kind == "diamond":
        return np.abs(u) + np.abs(v) <= 1
    raise ValueError(f"unknown shape kind {kind!r}")


def _background(rng, h: int, w: int) -> np.ndarray:
    # Coarse noise upsampled by nearest neighbour plus fine grain, low saturation.
    cell = 8
    coarse = rng.uniform(0.25, 0.6, size=(3, h // cell + 1, w // cell + 1)).astype(np.float32)
    coarse = coarse.mean(axis=0, keepdims=True) * 0.8 + coarse * 0.2
    img = np.repeat(np.repeat(coarse, cell, axis=1), cell, axis=2)[:, :h, :w]
    return img + rng.normal(0, 0.04, size=(3, h, w)).astype(np.float32)


def render_sample(rng, h: int, w: int, num_classes: int, shapes: tuple = (4, 10)) -> SegSample:
    image = _background(rng, h, w)
    label = np.zeros((h, w), np.uint8)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32) + 0.5
    count = int(rng.integers(shapes[0], shapes[1] + 1))
    for _ in range(count):
        cls = int(rng.integers(1, num_classes))
        mask = _mask(shape_kind(cls), rng, yy, xx, h, w)
        if not mask.any():
            continue
        colour = _class_colour(rng, cls, num_classes)
        image[:, mask] = colour[:, None]
        label[mask] = cls
    image += rng.normal(0, 0.02, size=image.shape).astype(np.float32)
    return SegSample(np.clip(image, 0.0, 1.0), label)


def synth_dataset(n: int, h: int, w: int, num_classes: int, seed: int, out_dir,
                  val_fraction: float = 0.2, n_val: Optional[int] = None) -> Manifest:
    """Render ``n`` samples to ``out_dir`` and write ``manifest.txt``.

    The last ``n_val`` samples (default ``round(n * val_fraction)``) form the
    val split; mean and std are computed over the train split.
    """
    if num_classes < 2:
        raise DataError("need at least 2 classes")
    if h < 16 or w < 16 or h % 16 or w % 16:
        raise DataError(f"dims ({h}, {w}) must be positive multiples of 16")
    n_val = round(n * val_fraction) if n_val is None else n_val
    if not 0 <= n_val < n:
        raise DataError(f"val count {n_val} leaves no training samples out of {n}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    total = np.zeros(3, np.float64)
    total_sq = np.zeros(3, np.float64)
    for i in range(n):
        sample = render_sample(rng, h, w, num_classes)
        split = "train" if i < n - n_val else "val"
        img_rel, lab_rel = f"images/{i:05d}.ppm", f"labels/{i:05d}.pgm"
        write_sample(out / img_rel, out / lab_rel, sample)
        if split == "train":
            # Stats of the quantized pixels, i.e. what a reader gets back.
            q = np.rint(sample.image * 255.0) / 255.0
            total += q.sum(axis=(1, 2))
            total_sq += (q.astype(np.float64) ** 2).sum(axis=(1, 2))
        entries.append((img_rel, lab_rel, split))
    count = (n - n_val) * h * w
    mean = total / count
    std = np.sqrt(np.maximum(total_sq / count - mean ** 2, 1e-12))
    write_manifest(out / "manifest.txt", entries, mean, std)
    return Manifest(out, entries, tuple(mean), tuple(std))
