"""Seeded generator of synthetic planning-map corpora with exact ground truth.

Each sample is a Voronoi partition of the canvas: region labels come from
the nearest seed point (Euclidean, ties to the lowest seed index), rendered
through the palette and then degraded in order with 1-px boundary ink,
random dark clutter polylines (mimicking overprinted text and symbols), and
clamped Gaussian RGB noise. Labels are fixed before degradation and never
altered by it, so ink and clutter are label noise by construction.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .data import Manifest, ManifestEntry, Palette, save_manifest, save_png
from .errors import ArgumentError
from .rng import Rng

INK_COLOR = (0, 0, 0)


@dataclass
class SynthSpec:
    width: int = 128
    height: int = 128
    num_regions: int = 6
    num_classes: int = 11
    noise_stddev: float = 8.0
    boundary_ink: bool = True
    clutter_strokes: int = 6
    seed: int = 0

    def validate(self, palette: Palette) -> "SynthSpec":
        if self.width < 16 or self.height < 16:
            raise ArgumentError("synthetic maps must be at least 16x16")
        if self.num_regions < 1:
            raise ArgumentError("num_regions must be >= 1")
        if not 1 <= self.num_classes <= len(palette):
            raise ArgumentError(
                f"num_classes {self.num_classes} exceeds palette of {len(palette)}"
            )
        if self.noise_stddev < 0:
            raise ArgumentError("noise_stddev must be >= 0")
        if self.clutter_strokes < 0:
            raise ArgumentError("clutter_strokes must be >= 0")
        return self


@dataclass
class SynthSample:
    image: np.ndarray  # (h, w, 3) uint8
    labels: np.ndarray  # (h, w) uint8
    seed: int


def _voronoi_labels(spec: SynthSpec, rng: Rng) -> np.ndarray:
    """Label every pixel with the class of its nearest seed point."""
    xs = rng.randints(spec.num_regions, 0, spec.width)
    ys = rng.randints(spec.num_regions, 0, spec.height)
    classes = rng.randints(spec.num_regions, 0, spec.num_classes)
    gy, gx = np.mgrid[0 : spec.height, 0 : spec.width]
    d2 = (gx[None] - xs[:, None, None]) ** 2 + (gy[None] - ys[:, None, None]) ** 2
    nearest = d2.argmin(axis=0)  # first minimum = lowest seed index
    return classes[nearest].astype(np.uint8)


def _boundary_mask(labels: np.ndarray) -> np.ndarray:
    """Pixels whose right or down neighbor holds a different label."""
    m = np.zeros(labels.shape, dtype=bool)
    m[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    m[:-1, :] |= labels[:-1, :] != labels[1:, :]
    return m


def _draw_line(image: np.ndarray, y0, x0, y1, x1, color):
    """Bresenham line, clipped to the canvas."""
    h, w = image.shape[:2]
    dy = abs(y1 - y0)
    dx = abs(x1 - x0)
    sy = 1 if y0 < y1 else -1
    sx = 1 if x0 < x1 else -1
    err = dx - dy
    y, x = y0, x0
    while True:
        if 0 <= y < h and 0 <= x < w:
            image[y, x] = color
        if y == y1 and x == x1:
            break
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy


def _draw_clutter(image: np.ndarray, count: int, rng: Rng):
    """Short dark polylines of 1-3 segments, like map text strokes."""
    h, w = image.shape[:2]
    for _ in range(count):
        y = rng.randint(0, h)
        x = rng.randint(0, w)
        segments = rng.randint(1, 4)
        for _ in range(segments):
            ny = y + rng.randint(-8, 9)
            nx = x + rng.randint(-8, 9)
            _draw_line(image, y, x, ny, nx, INK_COLOR)
            y, x = ny, nx


def generate(spec: SynthSpec, palette: Palette) -> SynthSample:
    """Deterministic sample for (spec, seed); labels precede degradation."""
    spec.validate(palette)
    rng = Rng(spec.seed)
    labels = _voronoi_labels(spec, rng)
    image = palette.render(labels).copy()
    if spec.boundary_ink:
        image[_boundary_mask(labels)] = INK_COLOR
    if spec.clutter_strokes:
        _draw_clutter(image, spec.clutter_strokes, rng)
    if spec.noise_stddev > 0:
        noise = rng.normal(image.size).reshape(image.shape) * spec.noise_stddev
        noisy = np.rint(image.astype(np.float64) + noise)
        image = np.clip(noisy, 0, 255).astype(np.uint8)
    return SynthSample(image=image, labels=labels, seed=spec.seed)


def _partition_counts(count: int, split) -> tuple:
    """(train, cv, test) sizes from fractions summing to 1 or explicit counts."""
    values = tuple(split)
    if len(values) != 3:
        raise ArgumentError("split must have three values (train, cv, test)")
    if all(float(v).is_integer() for v in values) and sum(values) == count:
        n_train, n_cv, n_test = (int(v) for v in values)
    else:
        fracs = [float(v) for v in values]
        if any(f <= 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
            raise ArgumentError(f"split fractions must be positive and sum to 1: {fracs}")
        n_train = math.floor(count * fracs[0])
        n_cv = math.floor(count * fracs[1])
        n_test = count - n_train - n_cv
    if min(n_train, n_cv, n_test) < 1:
        raise ArgumentError(f"split {values} leaves an empty partition for count {count}")
    return n_train, n_cv, n_test


def generate_corpus(
    spec_template: SynthSpec,
    count: int,
    split,
    seed: int,
    out_dir,
    palette: Palette,
) -> Manifest:
    """Write count PNG sample pairs plus manifest.txt under out_dir.

    Per-sample seeds are split off the corpus seed in index order, so the
    corpus is byte-reproducible from (spec, count, split, seed).
    """
    if count < 3:
        raise ArgumentError("corpus needs at least 3 samples for a three-way split")
    n_train, n_cv, n_test = _partition_counts(count, split)
    os.makedirs(out_dir, exist_ok=True)
    corpus_rng = Rng(seed)
    entries = []
    for i in range(count):
        sample_seed = corpus_rng.next_u64()
        sample = generate(replace(spec_template, seed=sample_seed), palette)
        img_path = os.path.join(out_dir, f"img_{i:04d}.png")
        lbl_path = os.path.join(out_dir, f"lbl_{i:04d}.png")
        save_png(sample.image, img_path)
        save_png(palette.render(sample.labels), lbl_path)
        if i < n_train:
            part = "train"
        elif i < n_train + n_cv:
            part = "cv"
        else:
            part = "test"
        entries.append(ManifestEntry(part, img_path, lbl_path))
    manifest = Manifest(entries)
    save_manifest(manifest, os.path.join(out_dir, "manifest.txt"), relative_to=out_dir)
    return manifest
