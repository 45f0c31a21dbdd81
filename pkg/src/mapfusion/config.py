"""Flat dotted-key configuration: defaults, JSON file, flag overrides, echo."""
from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError, InputError
from .model import OwaConfig
from .training import TrainConfig

ECHO_NAME = "config.echo.json"

DEFAULTS = {
    "seed": 1,
    "jobs": 1,
    "model.in_channels": 5,
    "model.feature_width": 16,
    "model.num_layers": 4,
    "model.attention_hidden": 8,
    "model.residual": True,
    "train.lr0": 1e-3,
    "train.batch": 4,
    "train.epochs": 20,
    "train.plateau_patience": 5,
    "train.lr_factor": 0.1,
    "train.val_subset": 300,
    "train.shuffle": True,
    "synth.train": 600,
    "synth.val": 50,
    "synth.test": 50,
    "synth.k": 5,
    "synth.size": 128,
    "eval.threshold": 0.5,
}


def _coerce(key, value):
    ref = DEFAULTS[key]
    if isinstance(ref, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key} must be true or false, got {value!r}")
    if isinstance(ref, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return int(value)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    return float(value)


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file, then non-None overrides."""
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a JSON object of dotted keys")
        for key, value in raw.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = _coerce(key, value)
    return cfg


def owa_config(cfg: dict) -> OwaConfig:
    return OwaConfig(in_channels=cfg["model.in_channels"], feature_width=cfg["model.feature_width"],
                     num_layers=cfg["model.num_layers"], attention_hidden=cfg["model.attention_hidden"],
                     seed=cfg["seed"], residual=cfg["model.residual"])


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(lr0=cfg["train.lr0"], batch=cfg["train.batch"], epochs=cfg["train.epochs"],
                       plateau_patience=cfg["train.plateau_patience"], lr_factor=cfg["train.lr_factor"],
                       val_subset=cfg["train.val_subset"], seed=cfg["seed"], shuffle=cfg["train.shuffle"])


def echo_config(cfg: dict, out_dir, command: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / ECHO_NAME
    path.write_text(json.dumps({"command": command, **cfg}, indent=2, sort_keys=True) + "\n")
    return path
