"""Raster I/O, palette codec, patch sampling, augmentation, epoch assembly.

Images are (h, w, 3) uint8 arrays, label maps (h, w) uint8 arrays of class
indices. A palette maps class indices to distinct RGB colors; annotation
rasters are decoded by nearest palette color within a Chebyshev tolerance,
and any ambiguity is an error rather than a guess.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ArgumentError, DataError, FileFormatError
from .rng import Rng

PARTITIONS = ("train", "cv", "test")

# eleven pairwise well-separated colors (min Chebyshev distance 127) for
# synthetic corpora; real corpora supply their own palette file
DEFAULT_PALETTE_SPEC = [
    (0, "residential", (255, 0, 0)),
    (1, "commercial", (0, 255, 0)),
    (2, "industrial", (0, 0, 255)),
    (3, "park", (255, 255, 0)),
    (4, "water", (255, 0, 255)),
    (5, "road", (0, 255, 255)),
    (6, "public", (255, 128, 0)),
    (7, "agriculture", (128, 0, 255)),
    (8, "forest", (0, 128, 0)),
    (9, "transport", (128, 128, 128)),
    (10, "vacant", (255, 255, 255)),
]


class Palette:
    """Bijection between class indices and RGB colors."""

    def __init__(self, entries):
        entries = sorted(entries, key=lambda e: e[0])
        indices = [e[0] for e in entries]
        if indices != list(range(len(entries))):
            raise DataError(f"palette indices must be contiguous from 0, got {indices}")
        colors = [tuple(int(v) for v in e[2]) for e in entries]
        for color in colors:
            if len(color) != 3 or not all(0 <= v <= 255 for v in color):
                raise DataError(f"bad palette color {color}")
        if len(set(colors)) != len(colors):
            raise DataError("palette colors must be pairwise distinct")
        self.names = [str(e[1]) for e in entries]
        self.colors = np.array(colors, dtype=np.uint8)

    def __len__(self):
        return len(self.names)

    @classmethod
    def default(cls) -> "Palette":
        return cls(DEFAULT_PALETTE_SPEC)

    @classmethod
    def from_file(cls, path) -> "Palette":
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 5:
                    raise DataError(f"{path}:{lineno}: expected 'index name r g b'")
                try:
                    entries.append((int(parts[0]), parts[1], tuple(int(v) for v in parts[2:])))
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from exc
        if not entries:
            raise DataError(f"{path}: empty palette")
        return cls(entries)

    def to_file(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# index name r g b\n")
            for i, name in enumerate(self.names):
                r, g, b = (int(v) for v in self.colors[i])
                fh.write(f"{i} {name} {r} {g} {b}\n")

    def render(self, labels: np.ndarray) -> np.ndarray:
        """LabelMap -> RGB raster using this palette."""
        labels = np.asarray(labels)
        if labels.size and labels.max() >= len(self):
            raise DataError(f"label {labels.max()} outside palette of {len(self)} classes")
        return self.colors[labels]


def decode_labels(raster: np.ndarray, palette: Palette, tolerance: int = 0) -> np.ndarray:
    """Map each pixel to the nearest palette color within a Chebyshev
    tolerance. No color in range, or two colors tied at the minimum
    distance, is a data error naming the offending pixel."""
    if tolerance < 0:
        raise ArgumentError(f"tolerance must be >= 0, got {tolerance}")
    raster = np.asarray(raster)
    if raster.ndim != 3 or raster.shape[2] != 3:
        raise DataError(f"expected (h, w, 3) raster, got {raster.shape}")
    diff = raster[:, :, None, :].astype(np.int16) - palette.colors[None, None, :, :].astype(np.int16)
    dist = np.abs(diff).max(axis=3)  # (h, w, n_classes) Chebyshev
    best = dist.min(axis=2)
    labels = dist.argmin(axis=2)

    out_of_range = best > tolerance
    if out_of_range.any():
        y, x = np.argwhere(out_of_range)[0]
        raise DataError(
            f"pixel ({y}, {x}) with color {tuple(raster[y, x])} has no palette "
            f"color within tolerance {tolerance}"
        )
    ambiguous = (dist == best[:, :, None]).sum(axis=2) > 1
    if ambiguous.any():
        y, x = np.argwhere(ambiguous)[0]
        raise DataError(
            f"pixel ({y}, {x}) with color {tuple(raster[y, x])} is equidistant "
            f"to multiple palette colors"
        )
    return labels.astype(np.uint8)


def load_png(path) -> np.ndarray:
    """Read an 8-bit PNG as an (h, w, 3) uint8 array."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            rgb = img.convert("RGB")
            return np.asarray(rgb, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise FileFormatError(f"{path}: cannot decode PNG ({exc})") from exc


def save_png(array: np.ndarray, path):
    """Write an (h, w, 3) RGB or (h, w) grayscale uint8 array losslessly."""
    array = np.asarray(array, dtype=np.uint8)
    if array.ndim == 2:
        img = Image.fromarray(array, mode="L")
    elif array.ndim == 3 and array.shape[2] == 3:
        img = Image.fromarray(array, mode="RGB")
    else:
        raise ArgumentError(f"cannot encode array of shape {array.shape} as PNG")
    img.save(path, format="PNG")


def image_to_tensor(image: np.ndarray) -> np.ndarray:
    """(h, w, 3) uint8 -> (3, h, w) float32 scaled by exactly 1/255."""
    return (image.astype(np.float32) / 255.0).transpose(2, 0, 1)


def sample_patches(image, labels, patch_size, count, rng: Rng):
    """Uniform random aligned (image, label) patches; image values in [0, 1]."""
    image = np.asarray(image)
    labels = np.asarray(labels)
    if image.shape[:2] != labels.shape:
        raise ArgumentError(f"image {image.shape[:2]} and labels {labels.shape} disagree")
    h, w = labels.shape
    if h < patch_size or w < patch_size:
        raise ArgumentError(f"image {h}x{w} smaller than patch {patch_size}")
    tensor = image_to_tensor(image)
    out = []
    for _ in range(count):
        top = rng.randint(0, h - patch_size + 1)
        left = rng.randint(0, w - patch_size + 1)
        out.append(
            (
                tensor[:, top : top + patch_size, left : left + patch_size].copy(),
                labels[top : top + patch_size, left : left + patch_size].copy(),
            )
        )
    return out


@dataclass
class AugmentSpec:
    """Enabled label-preserving transforms."""

    rotations: tuple = (1, 2, 3)  # quarter turns
    flip_h: bool = True
    flip_v: bool = True
    stretch_range: tuple = (0.8, 1.25)  # None disables stretching


def rotate90(image: np.ndarray, labels: np.ndarray, quarter_turns: int):
    """Rotate both rasters counterclockwise by 90-degree multiples."""
    k = quarter_turns % 4
    return (
        np.ascontiguousarray(np.rot90(image, k, axes=(1, 2))),
        np.ascontiguousarray(np.rot90(labels, k, axes=(0, 1))),
    )


def flip(image: np.ndarray, labels: np.ndarray, horizontal: bool):
    axis_img = 2 if horizontal else 1
    axis_lbl = 1 if horizontal else 0
    return (
        np.ascontiguousarray(np.flip(image, axis=axis_img)),
        np.ascontiguousarray(np.flip(labels, axis=axis_lbl)),
    )


def _resize_coords(dst: int, src: int) -> np.ndarray:
    """Continuous source coordinate of each destination pixel center."""
    return (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5


def _resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of a (c, h, w) float tensor, edge clamped."""
    c, h, w = image.shape
    ys = np.clip(_resize_coords(out_h, h), 0, h - 1)
    xs = np.clip(_resize_coords(out_w, w), 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(np.float32)[None, :, None]
    wx = (xs - x0).astype(np.float32)[None, None, :]
    top = image[:, y0][:, :, x0] * (1 - wx) + image[:, y0][:, :, x1] * wx
    bottom = image[:, y1][:, :, x0] * (1 - wx) + image[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bottom * wy


def _resize_nearest(labels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = labels.shape
    ys = np.clip(np.rint(_resize_coords(out_h, h)), 0, h - 1).astype(np.int64)
    xs = np.clip(np.rint(_resize_coords(out_w, w)), 0, w - 1).astype(np.int64)
    return labels[ys][:, xs]


def stretch(image: np.ndarray, labels: np.ndarray, factor: float, allowed=(0.8, 1.25)):
    """Scale both rasters by factor, then center-crop or edge-pad back to
    the original size. Image resamples bilinearly, labels nearest-neighbor
    so every output label remains a valid class index."""
    if not allowed[0] <= factor <= allowed[1]:
        raise ArgumentError(f"stretch factor {factor} outside [{allowed[0]}, {allowed[1]}]")
    c, h, w = image.shape
    if factor == 1.0:
        return image.copy(), labels.copy()
    new_h = max(1, int(round(h * factor)))
    new_w = max(1, int(round(w * factor)))
    img_out = _resize_bilinear(image, new_h, new_w)
    lbl_out = _resize_nearest(labels, new_h, new_w)
    # rounding can grow one axis while shrinking the other, so crop or
    # edge-pad each axis back to its original extent independently
    for axis, target in ((0, h), (1, w)):
        current = lbl_out.shape[axis]
        if current > target:
            start = (current - target) // 2
            sl = slice(start, start + target)
            img_out = img_out[:, sl, :] if axis == 0 else img_out[:, :, sl]
            lbl_out = lbl_out[sl, :] if axis == 0 else lbl_out[:, sl]
        elif current < target:
            before = (target - current) // 2
            pads = (before, target - current - before)
            img_pads = [(0, 0), (0, 0), (0, 0)]
            img_pads[axis + 1] = pads
            lbl_pads = [(0, 0), (0, 0)]
            lbl_pads[axis] = pads
            img_out = np.pad(img_out, img_pads, mode="edge")
            lbl_out = np.pad(lbl_out, lbl_pads, mode="edge")
    return np.ascontiguousarray(img_out.astype(np.float32)), np.ascontiguousarray(lbl_out)


def augment(patch, spec: AugmentSpec, rng: Rng):
    """Apply one randomly chosen enabled transform to an (image, label) pair."""
    image, labels = patch
    choices = []
    for k in spec.rotations:
        choices.append(("rot", k))
    if spec.flip_h:
        choices.append(("flip", True))
    if spec.flip_v:
        choices.append(("flip", False))
    if spec.stretch_range is not None:
        choices.append(("stretch", None))
    if not choices:
        return image.copy(), labels.copy()
    kind, arg = choices[rng.randint(0, len(choices))]
    if kind == "rot":
        return rotate90(image, labels, arg)
    if kind == "flip":
        return flip(image, labels, horizontal=arg)
    lo, hi = spec.stretch_range
    factor = lo + (hi - lo) * rng.uniform(1)[0]
    return stretch(image, labels, factor, allowed=spec.stretch_range)


@dataclass
class ManifestEntry:
    partition: str
    image_path: str
    label_path: str


@dataclass
class Manifest:
    entries: list

    def partition(self, name: str):
        return [e for e in self.entries if e.partition == name]


def load_manifest(path) -> Manifest:
    """Parse 'partition image_path label_path' lines; relative paths are
    resolved against the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 'partition image label'")
            part, img, lbl = parts
            if part not in PARTITIONS:
                raise DataError(f"{path}:{lineno}: unknown partition {part!r}")
            img = img if os.path.isabs(img) else os.path.join(base, img)
            lbl = lbl if os.path.isabs(lbl) else os.path.join(base, lbl)
            if (img, lbl) in seen:
                raise DataError(f"{path}:{lineno}: duplicate entry")
            seen.add((img, lbl))
            entries.append(ManifestEntry(part, img, lbl))
    return Manifest(entries)


def save_manifest(manifest: Manifest, path, relative_to=None):
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            img, lbl = e.image_path, e.label_path
            if relative_to is not None:
                img = os.path.relpath(img, relative_to)
                lbl = os.path.relpath(lbl, relative_to)
            fh.write(f"{e.partition} {img} {lbl}\n")


def load_pairs(entries, palette: Palette, tolerance: int = 0, cache: dict | None = None):
    """Decode (image, labelmap) pairs for manifest entries, with an optional
    cross-epoch cache keyed by path."""
    out = []
    for e in entries:
        key = (e.image_path, e.label_path)
        if cache is not None and key in cache:
            out.append(cache[key])
            continue
        image = load_png(e.image_path)
        labels = decode_labels(load_png(e.label_path), palette, tolerance)
        if image.shape[:2] != labels.shape:
            raise DataError(f"{e.image_path}: image/label size mismatch")
        pair = (image, labels)
        if cache is not None:
            cache[key] = pair
        out.append(pair)
    return out


def build_epoch(
    manifest: Manifest,
    palette: Palette,
    patch_size: int,
    patches_per_image: int,
    augment_fraction: float,
    rng: Rng,
    spec: AugmentSpec | None = None,
    tolerance: int = 0,
    cache: dict | None = None,
):
    """One training epoch: base patches from every train image plus
    ceil(augment_fraction * base_count) augmented extras, shuffled
    deterministically by the rng."""
    if not 0.0 <= augment_fraction <= 1.0:
        raise ArgumentError(f"augment_fraction must be in [0, 1], got {augment_fraction}")
    train = manifest.partition("train")
    if not train:
        raise DataError("manifest has no train entries")
    spec = spec or AugmentSpec()
    base = []
    for image, labels in load_pairs(train, palette, tolerance, cache):
        base.extend(sample_patches(image, labels, patch_size, patches_per_image, rng))
    # round at 1e-9 so decimal fractions like 0.10 give their exact ceil
    n_extra = math.ceil(round(augment_fraction * len(base), 9))
    extras = [augment(base[int(i)], spec, rng) for i in rng.choice(len(base), n_extra)]
    epoch = base + extras
    rng.shuffle(epoch)
    return epoch
