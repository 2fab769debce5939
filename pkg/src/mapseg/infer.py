"""Whole-map prediction by overlapped tiling.

Rasters larger than the network patch are covered by a grid of tiles whose
last row/column shifts flush to the border (never scaled); per-tile softmax
probabilities are averaged where tiles overlap and renormalized. Blending
accumulates in plan order, so output is bit-stable run to run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import unet
from .data import image_to_tensor
from .errors import ArgumentError, ShapeError
from .layers import softmax_channels


@dataclass
class TilingPlan:
    tile_size: int
    overlap: int
    rects: list  # (top, left) per tile


def _axis_starts(size: int, tile: int, stride: int):
    starts = list(range(0, size - tile + 1, stride))
    if starts[-1] != size - tile:
        starts.append(size - tile)
    return starts


def plan_tiles(width: int, height: int, tile_size: int, overlap: int) -> TilingPlan:
    """Full-coverage tile grid with the given overlap between neighbors."""
    if tile_size < 1:
        raise ArgumentError(f"tile_size must be >= 1, got {tile_size}")
    if not 0 <= overlap < tile_size:
        raise ArgumentError(f"overlap must be in [0, tile_size), got {overlap}")
    if width < tile_size or height < tile_size:
        raise ArgumentError(
            f"raster {width}x{height} smaller than tile {tile_size}; pad first"
        )
    stride = tile_size - overlap
    rects = [
        (top, left)
        for top in _axis_starts(height, tile_size, stride)
        for left in _axis_starts(width, tile_size, stride)
    ]
    return TilingPlan(tile_size, overlap, rects)


def predict_map(
    model: unet.UNetModel, image: np.ndarray, plan: TilingPlan, batch: int = 8
) -> np.ndarray:
    """Per-pixel class probabilities (num_classes, h, w) for a full raster.

    Tiles run through the network in inference mode; overlapping tile
    probabilities are averaged with uniform weights and renormalized.
    """
    t = plan.tile_size
    if t != model.config.patch_size:
        raise ArgumentError(
            f"plan tile {t} != model patch_size {model.config.patch_size}"
        )
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != model.config.input_channels:
        raise ShapeError(f"expected (h, w, {model.config.input_channels}) raster")
    h, w = image.shape[:2]
    tensor = image_to_tensor(image)
    num_classes = model.config.num_classes
    acc = np.zeros((num_classes, h, w), dtype=np.float32)
    count = np.zeros((h, w), dtype=np.float32)
    for i in range(0, len(plan.rects), batch):
        group = plan.rects[i : i + batch]
        x = np.stack([tensor[:, top : top + t, left : left + t] for top, left in group])
        logits, _ = unet.forward(model, x, training=False)
        probs = softmax_channels(logits)
        for j, (top, left) in enumerate(group):
            acc[:, top : top + t, left : left + t] += probs[j]
            count[top : top + t, left : left + t] += 1.0
    acc /= count[None, :, :]
    acc /= acc.sum(axis=0, keepdims=True)
    return acc


def argmax_labels(probs: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over the class axis; ties go to the lowest index."""
    if probs.ndim != 3 or probs.shape[0] < 1:
        raise ShapeError(f"expected (c, h, w) probabilities, got {probs.shape}")
    return probs.argmax(axis=0).astype(np.uint8)


def predict_labels(
    model: unet.UNetModel, image: np.ndarray, overlap: int | None = None, batch: int = 8
):
    """Probabilities and argmax labels for a raster of any size.

    Rasters smaller than the network patch are edge-padded for prediction
    and the output cropped back. Default overlap is a quarter tile.
    """
    t = model.config.patch_size
    if overlap is None:
        overlap = t // 4
    image = np.asarray(image)
    h, w = image.shape[:2]
    pad_h = max(0, t - h)
    pad_w = max(0, t - w)
    if pad_h or pad_w:
        image = np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    plan = plan_tiles(image.shape[1], image.shape[0], t, overlap)
    probs = predict_map(model, image, plan, batch=batch)
    probs = probs[:, :h, :w]
    return probs, argmax_labels(probs)
