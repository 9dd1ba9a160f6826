"""Line-oriented ``key = value`` configuration files with ``#`` comments.

One file can carry model, training, and scene-generation settings; unknown
keys are errors. The same key set round-trips through checkpoint snapshots.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError
from .harness import TrainConfig
from .model import ModelConfig
from .scenes import SceneSpec


def _to_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _to_int_tuple(s: str) -> tuple:
    return tuple(int(x) for x in s.split(",") if x.strip())


MODEL_KEYS = {
    "classes": ("n_classes", int),
    "levels": ("levels", int),
    "level_dims": ("level_dims", _to_int_tuple),
    "d_h": ("d_h", int),
    "d_m": ("d_m", int),
    "encoder_depth": ("encoder_depth", int),
    "decoder_depth": ("decoder_depth", int),
    "heads": ("heads", int),
    "level_offset": ("level_offset", int),
    "base_voxel": ("base_voxel", float),
    "norm_eps": ("norm_eps", float),
    "classifier": ("classifier", str),
    "affine": ("affine", str),
}

TRAIN_KEYS = {
    "base_lr": ("base_lr", float),
    "attention_lr_factor": ("attention_lr_factor", float),
    "weight_decay": ("weight_decay", float),
    "momentum": ("momentum", float),
    "epochs": ("epochs", int),
    "batch_size": ("batch_size", int),
    "warmup_fraction": ("warmup_fraction", float),
    "w_final": ("w_final", float),
    "w_mid": ("w_mid", float),
    "w_final_aux": ("w_final_aux", float),
    "seed": ("seed", int),
}

SCENE_KEYS = {
    "scene_objects": ("objects_per_scene", int),
    "scene_points_per_object": ("points_per_object", int),
    "scene_noise": ("noise_sigma", float),
    "scene_min_gap": ("min_gap", float),
    "scene_extent": ("extent", float),
}

EXTRA_KEYS = {"val_fraction": float, "ablate_train_scenes": int, "ablate_val_scenes": int}

KNOWN_KEYS = set(MODEL_KEYS) | set(TRAIN_KEYS) | set(SCENE_KEYS) | set(EXTRA_KEYS)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source} line {i}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source} line {i}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source} line {i}: duplicate key {key!r}")
        values[key] = value
    return values


def parse_config_file(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), source=str(path))


def _apply(values: dict[str, str], keymap: dict, target):
    for key, (attr, conv) in keymap.items():
        if key in values:
            try:
                setattr(target, attr, conv(values[key]))
            except ValueError as e:
                raise ConfigError(f"bad value for {key!r}: {values[key]!r} ({e})") from e
    return target


def model_config_from(values: dict[str, str]) -> ModelConfig:
    cfg = _apply(values, MODEL_KEYS, ModelConfig())
    cfg.validate()
    return cfg


def train_config_from(values: dict[str, str]) -> TrainConfig:
    cfg = _apply(values, TRAIN_KEYS, TrainConfig())
    cfg.validate()
    return cfg


def scene_spec_from(values: dict[str, str]) -> SceneSpec:
    spec = _apply(values, SCENE_KEYS, SceneSpec())
    spec.validate()
    return spec


def extra_from(values: dict[str, str]) -> dict:
    out = {"val_fraction": 0.2, "ablate_train_scenes": 200, "ablate_val_scenes": 50}
    for key, conv in EXTRA_KEYS.items():
        if key in values:
            out[key] = conv(values[key])
    return out


def snapshot(model_cfg: ModelConfig, train_cfg: TrainConfig) -> dict:
    """Config snapshot for checkpoints, in config-file key space."""
    out = {}
    for key, (attr, _) in MODEL_KEYS.items():
        out[key] = getattr(model_cfg, attr)
    for key, (attr, _) in TRAIN_KEYS.items():
        out[key] = getattr(train_cfg, attr)
    return out


def configs_from_snapshot(values: dict[str, str]) -> tuple[ModelConfig, TrainConfig]:
    unknown = set(values) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"snapshot has unknown keys: {sorted(unknown)}")
    return model_config_from(values), train_config_from(values)
