"""Morphological denoising of label maps.

Binary erosion/dilation/opening/closing over square or cross structuring
elements, a label-domain mode (majority) filter, and a composable policy
that applies them in sequence. Borders always use replicate extension so
no phantom class leaks in at the edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError

DEFAULT_POLICY_TEXT = "mode:3,open:3,close:3"


@dataclass(frozen=True)
class StructuringElement:
    k: int = 3
    shape: str = "square"  # or "cross"

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ArgumentError(f"structuring element size must be odd >= 1, got {self.k}")
        if self.shape not in ("square", "cross"):
            raise ArgumentError(f"unknown structuring element shape {self.shape!r}")

    def mask(self) -> np.ndarray:
        if self.shape == "square":
            return np.ones((self.k, self.k), dtype=bool)
        c = self.k // 2
        m = np.zeros((self.k, self.k), dtype=bool)
        m[c, :] = True
        m[:, c] = True
        return m


def _windows(grid: np.ndarray, k: int) -> np.ndarray:
    """(h, w, k, k) replicate-padded sliding windows centered per pixel."""
    pad = k // 2
    padded = np.pad(grid, pad, mode="edge")
    return np.lib.stride_tricks.sliding_window_view(padded, (k, k))


def erode(mask: np.ndarray, se: StructuringElement = StructuringElement()) -> np.ndarray:
    """Minimum over the structuring element at every pixel."""
    win = _windows(np.asarray(mask, dtype=bool), se.k)
    sel = se.mask()
    return win[:, :, sel].all(axis=2)


def dilate(mask: np.ndarray, se: StructuringElement = StructuringElement()) -> np.ndarray:
    """Maximum over the structuring element at every pixel."""
    win = _windows(np.asarray(mask, dtype=bool), se.k)
    sel = se.mask()
    return win[:, :, sel].any(axis=2)


def opening(mask: np.ndarray, se: StructuringElement = StructuringElement()) -> np.ndarray:
    return dilate(erode(mask, se), se)


def closing(mask: np.ndarray, se: StructuringElement = StructuringElement()) -> np.ndarray:
    return erode(dilate(mask, se), se)


def _class_counts(labels: np.ndarray, k: int, num_classes: int) -> np.ndarray:
    """Per-pixel histogram of the k x k neighborhood: (num_classes, h, w)."""
    counts = np.empty((num_classes, *labels.shape), dtype=np.int32)
    for c in range(num_classes):
        win = _windows((labels == c).astype(np.int32), k)
        counts[c] = win.sum(axis=(2, 3))
    return counts


def mode_filter(labels: np.ndarray, k: int = 3) -> np.ndarray:
    """Replace each label by the most frequent one in its k x k window.

    Ties keep the center's label when it is among the tied maxima,
    otherwise the lowest tied class index wins.
    """
    if k < 3 or k % 2 == 0:
        raise ArgumentError(f"mode filter window must be odd >= 3, got {k}")
    labels = np.asarray(labels)
    num_classes = int(labels.max()) + 1 if labels.size else 1
    counts = _class_counts(labels, k, num_classes)
    top = counts.max(axis=0)
    lowest_tied = counts.argmax(axis=0)  # argmax returns the first (lowest) max
    center_count = np.take_along_axis(counts, labels[None].astype(np.int64), axis=0)[0]
    out = np.where(center_count == top, labels, lowest_tied)
    return out.astype(labels.dtype)


def _per_class_morph(labels: np.ndarray, op, se: StructuringElement) -> np.ndarray:
    """Apply a binary morphology op to each class mask (ascending index) and
    recompose. Multi-claimed pixels go to the lowest claiming class;
    pixels claimed by no class take the mode of their 3 x 3 neighborhood
    in the input."""
    out = np.full(labels.shape, -1, dtype=np.int16)
    for c in np.unique(labels):
        claimed = op((labels == c), se)
        out[(out < 0) & claimed] = c
    orphans = out < 0
    if orphans.any():
        fallback = mode_filter(labels, 3)
        out[orphans] = fallback[orphans]
    return out.astype(labels.dtype)


def parse_policy(text: str):
    """Parse a policy string like 'mode:3,open:3,close:3' into op list."""
    steps = []
    if not text.strip():
        return steps
    for token in text.split(","):
        token = token.strip()
        if ":" not in token:
            raise ArgumentError(f"bad policy step {token!r}, expected op:k")
        op, _, arg = token.partition(":")
        op = op.strip()
        try:
            k = int(arg)
        except ValueError as exc:
            raise ArgumentError(f"bad policy size in {token!r}") from exc
        if op not in ("mode", "open", "close"):
            raise ArgumentError(f"unknown policy op {op!r}")
        steps.append((op, k))
    return steps


def denoise_labels(labels: np.ndarray, policy=None) -> np.ndarray:
    """Apply a sequence of (op, k) steps; default mode:3,open:3,close:3.

    Every output label is drawn from the input's label set, so no class is
    ever invented.
    """
    if policy is None:
        policy = parse_policy(DEFAULT_POLICY_TEXT)
    elif isinstance(policy, str):
        policy = parse_policy(policy)
    out = np.asarray(labels).copy()
    for op, k in policy:
        if op == "mode":
            out = mode_filter(out, k)
        elif op == "open":
            out = _per_class_morph(out, opening, StructuringElement(k, "square"))
        elif op == "close":
            out = _per_class_morph(out, closing, StructuringElement(k, "square"))
        else:
            raise ArgumentError(f"unknown policy op {op!r}")
    return out
