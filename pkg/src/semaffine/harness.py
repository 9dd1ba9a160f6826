"""Losses, SGD with schedule, and segmentation metrics.

The training objective is a weighted sum of a final-level cross entropy over
one-hot point labels and, per supervised mid level, a binary cross entropy of
the raw class scores against the multi-hot labels that shadow the pooling
hierarchy. The per-entry BCE uses the stable identity
``softplus(x) - target * x`` so no sigmoid is materialized.

The learning rate is ``base * group_factor * warm(t) * (1 - t/T)^2`` with a
linear warmup over the first 5% of steps; attention-module parameters use a
reduced group factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .hierarchy import MultiHotLabels
from .model import ForwardOutput
from .tensor import Tensor


@dataclass
class TrainConfig:
    base_lr: float = 2e-2
    attention_lr_factor: float = 0.1
    weight_decay: float = 1e-4
    momentum: float = 0.9
    epochs: int = 20
    batch_size: int = 4
    warmup_fraction: float = 0.05
    w_final: float = 1.0
    w_mid: float = 1.0
    w_final_aux: float = 0.1  # reserved weight for a second final-level branch; unused here
    seed: int = 0

    def validate(self):
        if self.base_lr <= 0 or self.attention_lr_factor <= 0:
            raise ConfigError("learning rates must be positive")
        if self.weight_decay < 0 or self.momentum < 0 or not 0 <= self.warmup_fraction < 1:
            raise ConfigError("invalid optimizer settings")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.w_final < 0 or self.w_mid < 0:
            raise ConfigError("loss weights must be >= 0")


# -- losses --------------------------------------------------------------------


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean over points of -log softmax(logits)[label]."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ContractError(f"cross_entropy: label out of range [0, {logits.shape[1]})")
    picked = T.pick(T.log_softmax(logits, axis=1), labels)
    return T.scale(T.mean_all(picked), -1.0)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over entries of BCE(sigmoid(logit), target), computed stably."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ShapeError(f"bce: logits {logits.shape} vs targets {targets.shape}")
    if not np.isin(targets, (0.0, 1.0)).all():
        raise ContractError("bce: targets must be binary")
    return T.mean_all(T.softplus(logits) - T.mul(logits, Tensor(targets)))


def midlevel_bce_loss(mid_logits: list[Tensor], targets: list[np.ndarray]) -> Tensor:
    """Per level the mean entrywise BCE; levels are then summed."""
    if len(mid_logits) != len(targets):
        raise ShapeError(f"midlevel_bce: {len(mid_logits)} logit blocks vs {len(targets)} target blocks")
    if not mid_logits:
        raise ContractError("midlevel_bce: no supervised levels")
    total = bce_with_logits(mid_logits[0], targets[0])
    for logits, tgt in zip(mid_logits[1:], targets[1:]):
        total = total + bce_with_logits(logits, tgt)
    return total


def total_loss(
    fwd: ForwardOutput,
    labels,
    shadows: MultiHotLabels,
    w_final: float = 1.0,
    w_mid: float = 1.0,
) -> Tensor:
    """w_final * CE(final logits, labels) + w_mid * sum of mid-level BCEs."""
    ce = cross_entropy_loss(fwd.final_logits, labels)
    mid_logits = [mid.conf.logits for mid in fwd.mids]
    mid_targets = [shadows.levels[mid.level] for mid in fwd.mids]
    bce = midlevel_bce_loss(mid_logits, mid_targets)
    return T.scale(ce, w_final) + T.scale(bce, w_mid)


# -- optimizer -----------------------------------------------------------------


def learning_rate(cfg: TrainConfig, t: int, total_steps: int, group_factor: float = 1.0) -> float:
    """base * factor * warm(t) * (1 - t/T)^2, warm ramping over the first 5%."""
    if total_steps < 1:
        raise ConfigError("total_steps must be >= 1")
    warmup_steps = cfg.warmup_fraction * total_steps
    warm = min(1.0, t / warmup_steps) if warmup_steps > 0 else 1.0
    lr = cfg.base_lr * group_factor * warm * (1.0 - t / total_steps) ** 2
    if lr < 0:
        raise ConfigError(f"schedule produced negative lr at step {t}")
    return lr


@dataclass
class SgdState:
    velocities: dict = field(default_factory=dict)  # name -> np.ndarray


def sgd_step(
    params: list[tuple[str, Tensor]],
    group_factors: list[float],
    state: SgdState,
    cfg: TrainConfig,
    t: int,
    total_steps: int,
) -> dict[float, float]:
    """One momentum-SGD update with decoupled group factors.

    velocity = momentum * velocity + grad + wd * param
    param   -= lr(t, group) * velocity

    Returns the learning rate actually used per group factor.
    """
    if len(group_factors) != len(params):
        raise ContractError("sgd_step: one group factor per parameter")
    lrs = {}
    for (name, p), factor in zip(params, group_factors):
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(grad).all():
            raise ContractError(f"sgd_step: non-finite gradient for {name}")
        v = state.velocities.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = cfg.momentum * v + grad + cfg.weight_decay * p.data
        state.velocities[name] = v
        if factor not in lrs:
            lrs[factor] = learning_rate(cfg, t, total_steps, factor)
        p.data -= lrs[factor] * v
    return lrs


# -- metrics -------------------------------------------------------------------


@dataclass
class Metrics:
    iou: np.ndarray  # per class; NaN where the class is absent from pred and gt
    miou: float
    accuracy: float
    confusion: np.ndarray  # (N, N), rows = ground truth

    def present_classes(self) -> np.ndarray:
        return np.flatnonzero(~np.isnan(self.iou))


def confusion_matrix(preds, labels, n_classes: int) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ShapeError(f"confusion: preds {preds.shape} vs labels {labels.shape}")
    if preds.size == 0:
        raise ContractError("confusion: empty prediction array")
    for arr, what in ((preds, "prediction"), (labels, "label")):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ContractError(f"confusion: {what} out of range [0, {n_classes})")
    idx = labels * n_classes + preds
    return np.bincount(idx, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def metrics_from_confusion(confusion: np.ndarray) -> Metrics:
    n_classes = confusion.shape[0]
    tp = np.diag(confusion).astype(np.float64)
    gt = confusion.sum(axis=1)
    pred = confusion.sum(axis=0)
    union = gt + pred - tp
    iou = np.full(n_classes, np.nan)
    present = union > 0
    iou[present] = tp[present] / union[present]
    miou = float(np.nanmean(iou)) if present.any() else float("nan")
    accuracy = float(tp.sum() / confusion.sum())
    return Metrics(iou=iou, miou=miou, accuracy=accuracy, confusion=confusion)


def compute_miou(preds, labels, n_classes: int) -> Metrics:
    """Per class IoU = tp / (tp + fp + fn); classes absent from both pred and
    ground truth are excluded from the mean."""
    return metrics_from_confusion(confusion_matrix(preds, labels, n_classes))
