"""SGD training loop with cross-validation model selection.

Plain SGD with classical momentum and a constant learning rate; the model
snapshot with the best cross-validation mean Jaccard is returned (exact
ties keep the earliest epoch). Non-finite loss aborts immediately with the
epoch/batch location rather than training on garbage.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import unet
from .errors import ArgumentError, DataError, NumericError, StateError
from .infer import predict_labels
from .layers import softmax_channels, softmax_cross_entropy
from .metrics import confusion, jaccard_per_class, mean_jaccard, overall_accuracy
from .rng import Rng


@dataclass
class TrainConfig:
    epochs: int
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 8
    seed: int = 0
    eval_every: int = 1

    def validate(self) -> "TrainConfig":
        if self.learning_rate <= 0:
            raise ArgumentError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ArgumentError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ArgumentError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ArgumentError("epochs must be >= 1")
        if self.eval_every < 1:
            raise ArgumentError("eval_every must be >= 1")
        return self


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)  # one per epoch
    eval_epochs: list = field(default_factory=list)
    cv_mjacc: list = field(default_factory=list)
    cv_oa: list = field(default_factory=list)
    best_epoch: int = 0
    wall_seconds: float = 0.0

    def to_csv(self) -> str:
        """Per-epoch rows; CV columns are blank on epochs without an
        evaluation. Wall-clock time deliberately stays out of the file so
        identical runs produce identical bytes."""
        lines = ["epoch,loss,cv_mjacc,cv_oa"]
        evals = dict(zip(self.eval_epochs, zip(self.cv_mjacc, self.cv_oa)))
        for i, loss in enumerate(self.train_loss, start=1):
            if i in evals:
                mj, oa = evals[i]
                lines.append(f"{i},{loss:.6f},{mj:.6f},{oa:.6f}")
            else:
                lines.append(f"{i},{loss:.6f},,")
        return "\n".join(lines) + "\n"


def zero_velocity(model: unet.UNetModel) -> dict:
    return {name: np.zeros_like(p) for name, p in model.named_parameters()}


def sgd_step(model: unet.UNetModel, grads: dict, velocity: dict, cfg: TrainConfig):
    """v <- momentum*v + g; p <- p - lr*v, in place. BN running statistics
    are model state, not parameters, and are untouched here."""
    names = [name for name, _ in model.named_parameters()]
    if set(grads) != set(names) or set(velocity) != set(names):
        raise StateError("gradient/velocity names do not match model parameters")
    for name, p in model.named_parameters():
        v = velocity[name]
        v *= cfg.momentum
        v += grads[name].astype(p.dtype, copy=False)
        p -= cfg.learning_rate * v


def evaluate(model: unet.UNetModel, labeled_set, batch: int = 8):
    """(mean Jaccard, overall accuracy, per-class Jaccard) over a set of
    (rgb raster, labelmap) pairs. Patch-sized rasters are batched through
    the network directly; larger ones run tiled inference."""
    if not labeled_set:
        raise ArgumentError("evaluation set is empty")
    num_classes = model.config.num_classes
    patch = model.config.patch_size
    total = np.zeros((num_classes, num_classes), dtype=np.int64)
    direct = [(img, lbl) for img, lbl in labeled_set if img.shape[:2] == (patch, patch)]
    tiled = [(img, lbl) for img, lbl in labeled_set if img.shape[:2] != (patch, patch)]
    for i in range(0, len(direct), batch):
        group = direct[i : i + batch]
        x = np.stack([(img.astype(np.float32) / 255.0).transpose(2, 0, 1) for img, _ in group])
        logits, _ = unet.forward(model, x, training=False)
        pred = softmax_channels(logits).argmax(axis=1).astype(np.uint8)
        for j, (_, lbl) in enumerate(group):
            total += confusion(pred[j], lbl, num_classes)
    for img, lbl in tiled:
        _, pred = predict_labels(model, img, batch=batch)
        total += confusion(pred, lbl, num_classes)
    return mean_jaccard(total), overall_accuracy(total), jaccard_per_class(total)


def train(model: unet.UNetModel, epoch_fn, cv_set, cfg: TrainConfig):
    """Optimize the model in place; returns (best snapshot, report).

    epoch_fn(rng) must yield the epoch's list of (image tensor, label
    patch) pairs; it is called once per epoch with a child rng split from
    the config seed, so a fixed seed fixes the whole run.
    """
    cfg.validate()
    if not cv_set:
        raise DataError("cross-validation set is empty")
    t0 = time.perf_counter()
    rng = Rng(cfg.seed)
    velocity = zero_velocity(model)
    report = TrainReport()
    best_model = None
    best_j = float("-inf")
    for epoch in range(1, cfg.epochs + 1):
        patches = epoch_fn(rng.split())
        if not patches:
            raise DataError(f"epoch {epoch}: empty patch stream")
        loss_sum = 0.0
        sample_count = 0
        for start in range(0, len(patches), cfg.batch_size):
            chunk = patches[start : start + cfg.batch_size]
            x = np.stack([p[0] for p in chunk])
            labels = np.stack([p[1] for p in chunk])
            logits, caches = unet.forward(model, x, training=True)
            loss, grad = softmax_cross_entropy(logits, labels)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss {loss} at epoch {epoch}, "
                    f"batch {start // cfg.batch_size}"
                )
            grads = unet.backward(model, caches, grad)
            sgd_step(model, grads, velocity, cfg)
            loss_sum += loss * len(chunk)
            sample_count += len(chunk)
        report.train_loss.append(loss_sum / sample_count)
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            mj, oa, _ = evaluate(model, cv_set)
            report.eval_epochs.append(epoch)
            report.cv_mjacc.append(mj)
            report.cv_oa.append(oa)
            if mj > best_j:
                best_j = mj
                report.best_epoch = epoch
                best_model = unet.clone(model)
    report.wall_seconds = time.perf_counter() - t0
    return best_model, report
