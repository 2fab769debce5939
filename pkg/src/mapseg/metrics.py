"""Confusion-matrix evaluation: per-class/mean Jaccard and overall accuracy.

Counts are 64-bit integers throughout; ratios are computed once at the end.
Matrices add exactly, so per-image matrices can be merged in any order.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError, DataError


def confusion(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """C x C counts, entry (g, p) = pixels with ground truth g predicted p."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DataError(f"pred {pred.shape} and gt {gt.shape} dims differ")
    p = pred.ravel().astype(np.int64)
    g = gt.ravel().astype(np.int64)
    if p.size:
        if p.min() < 0 or p.max() >= num_classes:
            raise DataError(f"prediction label outside [0, {num_classes})")
        if g.min() < 0 or g.max() >= num_classes:
            raise DataError(f"ground-truth label outside [0, {num_classes})")
    m = np.bincount(g * num_classes + p, minlength=num_classes * num_classes)
    return m.reshape(num_classes, num_classes)


def jaccard_per_class(m: np.ndarray) -> np.ndarray:
    """J_c = TP / (TP + FP + FN) per class; NaN where the class is absent
    from both prediction and ground truth (0/0)."""
    m = np.asarray(m, dtype=np.int64)
    tp = np.diag(m)
    denom = m.sum(axis=0) + m.sum(axis=1) - tp
    out = np.full(m.shape[0], np.nan, dtype=np.float64)
    defined = denom > 0
    out[defined] = tp[defined] / denom[defined]
    return out


def mean_jaccard(m: np.ndarray) -> float:
    """Mean over defined classes only; undefined (0/0) classes are excluded."""
    j = jaccard_per_class(m)
    defined = ~np.isnan(j)
    if not defined.any():
        raise ArgumentError("no class is present in prediction or ground truth")
    return float(j[defined].mean())


def micro_jaccard(m: np.ndarray) -> float:
    """Globally pooled TP / (TP + FP + FN) over all classes."""
    m = np.asarray(m, dtype=np.int64)
    total = int(m.sum())
    if total == 0:
        raise ArgumentError("empty confusion matrix")
    tp = int(np.trace(m))
    return tp / (2 * total - tp)


def overall_accuracy(m: np.ndarray) -> float:
    m = np.asarray(m, dtype=np.int64)
    total = int(m.sum())
    if total == 0:
        raise ArgumentError("empty confusion matrix")
    return int(np.trace(m)) / total


def evaluation_report(m: np.ndarray, class_names) -> str:
    """CSV report: one row per class, then mean-J, micro-J, OA footers."""
    j = jaccard_per_class(m)
    lines = ["class,jaccard"]
    for i, name in enumerate(class_names):
        value = "undefined" if np.isnan(j[i]) else f"{j[i]:.6f}"
        lines.append(f"{name},{value}")
    lines.append(f"mean_jaccard,{mean_jaccard(m):.6f}")
    lines.append(f"micro_jaccard,{micro_jaccard(m):.6f}")
    lines.append(f"overall_accuracy,{overall_accuracy(m):.6f}")
    return "\n".join(lines) + "\n"
