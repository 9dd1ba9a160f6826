"""Training and evaluation loops over scene corpora, plus the ablation driver.

Everything downstream of (config, seed) is deterministic: scene order comes
from seeded per-epoch permutations, initialization from per-component seed
streams, and all math is float64 numpy, so repeated runs produce
byte-identical metric logs and checkpoints.

The per-epoch metrics log is tab-separated: ``epoch  train_loss  val_miou  lr``
with the learning rate sampled at the epoch's first optimizer step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, restore_parameters, save_checkpoint
from .config import configs_from_snapshot, snapshot
from .errors import ContractError, NumericError
from .harness import (
    Metrics,
    SgdState,
    TrainConfig,
    confusion_matrix,
    learning_rate,
    metrics_from_confusion,
    sgd_step,
    total_loss,
)
from .hierarchy import Hierarchy, build_hierarchy, one_hot, shadow_labels
from .model import ModelConfig, ModelParams, attention_group_mask, build_model, model_forward
from .scenes import LabeledCloud, read_manifest, read_scene


@dataclass
class PreparedScene:
    cloud: LabeledCloud
    hier: Hierarchy
    shadows: object  # MultiHotLabels


def prepare_scene(cloud: LabeledCloud, cfg: ModelConfig) -> PreparedScene:
    hier = build_hierarchy(cloud.coords, cfg.base_voxel, cfg.levels)
    shadows = shadow_labels(hier, one_hot(cloud.labels, cfg.n_classes))
    return PreparedScene(cloud=cloud, hier=hier, shadows=shadows)


def load_corpus(manifest_path, cfg: ModelConfig):
    """Load and prepare every scene in a manifest, keyed by split tag."""
    entries = read_manifest(manifest_path)
    if not entries:
        raise ContractError(f"empty manifest: {manifest_path}")
    root = Path(manifest_path).parent
    splits: dict[str, list[PreparedScene]] = {"train": [], "val": []}
    for rel_path, tag in entries:
        path = Path(rel_path)
        if not path.is_absolute():
            path = root / path
        cloud = read_scene(path)
        if cloud.n_classes != cfg.n_classes:
            raise ContractError(
                f"{path}: scene has {cloud.n_classes} classes, model expects {cfg.n_classes}")
        splits[tag].append(prepare_scene(cloud, cfg))
    return splits


def evaluate_scenes(params: ModelParams, scenes: list[PreparedScene]) -> Metrics:
    """Pool confusion counts over all scenes before computing IoU."""
    if not scenes:
        raise ContractError("evaluate_scenes: no scenes")
    n = params.cfg.n_classes
    pooled = np.zeros((n, n), dtype=np.int64)
    for scene in scenes:
        out = model_forward(params, scene.cloud, hier=scene.hier)
        preds = out.final_logits.data.argmax(axis=1)
        pooled += confusion_matrix(preds, scene.cloud.labels, n)
    return metrics_from_confusion(pooled)


@dataclass
class TrainResult:
    params: ModelParams
    log_lines: list[str]
    final_val: Metrics | None
    checkpoint_path: str | None


def train_model(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_scenes: list[PreparedScene],
    val_scenes: list[PreparedScene],
    out_ckpt=None,
) -> TrainResult:
    model_cfg.validate()
    train_cfg.validate()
    if not train_scenes:
        raise ContractError("train_model: no training scenes")

    params = build_model(model_cfg, seed=train_cfg.seed)
    named = params.named_parameters()
    names = [n for n, _ in named]
    factors = [train_cfg.attention_lr_factor if m else 1.0 for m in attention_group_mask(names)]
    state = SgdState()

    n_train = len(train_scenes)
    steps_per_epoch = math.ceil(n_train / train_cfg.batch_size)
    total_steps = train_cfg.epochs * steps_per_epoch

    log_lines: list[str] = []
    final_val: Metrics | None = None
    t = 0
    for epoch in range(train_cfg.epochs):
        order = np.random.default_rng([train_cfg.seed, 1000 + epoch]).permutation(n_train)
        epoch_losses = []
        epoch_lr = learning_rate(train_cfg, t, total_steps)
        for s in range(steps_per_epoch):
            batch = order[s * train_cfg.batch_size:(s + 1) * train_cfg.batch_size]
            params.zero_grad()
            batch_loss = 0.0
            for idx in batch:
                scene = train_scenes[idx]
                out = model_forward(params, scene.cloud, hier=scene.hier)
                loss = total_loss(out, scene.cloud.labels, scene.shadows,
                                  w_final=train_cfg.w_final, w_mid=train_cfg.w_mid)
                loss = loss * (1.0 / len(batch))
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError(f"non-finite loss at epoch {epoch} step {s}")
                batch_loss += value
                loss.backward()
            sgd_step(named, factors, state, train_cfg, t, total_steps)
            epoch_losses.append(batch_loss)
            t += 1
        train_loss = float(np.mean(epoch_losses))
        if val_scenes:
            final_val = evaluate_scenes(params, val_scenes)
            val_miou = final_val.miou
        else:
            val_miou = float("nan")
        log_lines.append(f"{epoch}\t{train_loss:.17g}\t{val_miou:.17g}\t{epoch_lr:.17g}")

    checkpoint_path = None
    if out_ckpt is not None:
        save_checkpoint(out_ckpt, named, snapshot(model_cfg, train_cfg), step=t)
        checkpoint_path = str(out_ckpt)
    return TrainResult(params=params, log_lines=log_lines, final_val=final_val,
                       checkpoint_path=checkpoint_path)


def train_run(manifest_path, model_cfg: ModelConfig, train_cfg: TrainConfig,
              out_ckpt, log_path=None) -> TrainResult:
    """Manifest-driven training; writes the final checkpoint and optionally
    the per-epoch metrics log."""
    splits = load_corpus(manifest_path, model_cfg)
    result = train_model(model_cfg, train_cfg, splits["train"], splits["val"], out_ckpt=out_ckpt)
    if log_path is not None:
        Path(log_path).write_text("\n".join(result.log_lines) + "\n", encoding="utf-8")
    return result


def restore_model(ckpt_path) -> tuple[ModelParams, ModelConfig, TrainConfig, int]:
    config, step, entries = load_checkpoint(ckpt_path)
    model_cfg, train_cfg = configs_from_snapshot(config)
    params = build_model(model_cfg, seed=train_cfg.seed)
    restore_parameters(params.named_parameters(), entries)
    return params, model_cfg, train_cfg, step


def eval_run(ckpt_path, manifest_path, split: str = "val") -> Metrics:
    """Restore a checkpoint and compute pooled metrics over one split
    (``val`` by default, ``train`` or ``all`` otherwise)."""
    params, model_cfg, _, _ = restore_model(ckpt_path)
    splits = load_corpus(manifest_path, model_cfg)
    if split == "all":
        scenes = splits["train"] + splits["val"]
    elif split in splits:
        scenes = splits[split]
    else:
        raise ContractError(f"eval split must be train|val|all, got {split!r}")
    if not scenes:
        raise ContractError(f"no scenes with split {split!r} in {manifest_path}")
    return evaluate_scenes(params, scenes)
