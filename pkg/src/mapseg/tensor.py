"""Dense 4-D tensors in NCHW layout.

A tensor is a numpy array of shape (n, c, h, w), float32 for all training
and inference state, row-major so convolution inner loops stride
contiguously over w. The gradient-check harness passes float64 arrays
through the same code paths; operations preserve the input dtype.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from .errors import ArgumentError, ShapeError
from .rng import Rng

# guard against index overflow on 64-bit platforms
_MAX_ELEMENTS = 1 << 62


class Shape4(NamedTuple):
    n: int
    c: int
    h: int
    w: int

    def count(self) -> int:
        return self.n * self.c * self.h * self.w


def check_shape(shape: Shape4) -> Shape4:
    shape = Shape4(*(int(d) for d in shape))
    if any(d < 0 for d in shape):
        raise ShapeError(f"negative dimension in {shape}")
    if shape.count() > _MAX_ELEMENTS:
        raise ArgumentError(f"element count of {shape} overflows the index type")
    return shape


def tensor_full(shape: Shape4, value: float, dtype=np.float32) -> np.ndarray:
    """Tensor of the given shape with every element equal to value."""
    shape = check_shape(shape)
    return np.full(tuple(shape), value, dtype=dtype)


def tensor_rand_normal(shape: Shape4, mean: float, stddev: float, rng: Rng) -> np.ndarray:
    """Gaussian tensor, deterministic given the rng state."""
    shape = check_shape(shape)
    if stddev < 0:
        raise ArgumentError(f"stddev must be >= 0, got {stddev}")
    draws = rng.normal(shape.count())
    return (mean + stddev * draws).astype(np.float32).reshape(tuple(shape))


def tensor_map(x: np.ndarray, f: Callable[[float], float]) -> np.ndarray:
    """Apply a scalar function elementwise; shape and dtype preserved."""
    return np.frompyfunc(f, 1, 1)(x).astype(x.dtype)


def tensor_zip(x: np.ndarray, y: np.ndarray, f: Callable[[float, float], float]) -> np.ndarray:
    """Combine two equal-shape tensors elementwise."""
    if x.shape != y.shape:
        raise ShapeError(f"zip shape mismatch: {x.shape} vs {y.shape}")
    return np.frompyfunc(f, 2, 1)(x, y).astype(x.dtype)


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stack b's channels after a's; batch and spatial dims must agree."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat mismatch: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=1)


def pad_spatial(x: np.ndarray, pad_h: int, pad_w: int, value: float = 0.0) -> np.ndarray:
    """Pad height/width symmetrically with a constant border."""
    if pad_h < 0 or pad_w < 0:
        raise ArgumentError(f"pads must be >= 0, got ({pad_h}, {pad_w})")
    if pad_h == 0 and pad_w == 0:
        return x.copy()
    return np.pad(
        x,
        ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)),
        mode="constant",
        constant_values=value,
    )


def center_crop_spatial(x: np.ndarray, h: int, w: int) -> np.ndarray:
    """Crop the spatial center region of size (h, w)."""
    if h > x.shape[2] or w > x.shape[3]:
        raise ShapeError(f"crop ({h}, {w}) larger than input {x.shape}")
    top = (x.shape[2] - h) // 2
    left = (x.shape[3] - w) // 2
    return x[:, :, top : top + h, left : left + w].copy()
