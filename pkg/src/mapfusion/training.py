"""Training loop: Adam, global-pixel-mean BCE, plateau LR schedule, best checkpoint."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Manifest, load_sample
from .errors import ConfigError, NumericError
from .model import OwaModel, backward, forward, save_checkpoint
from .tensor import AdamState, adam_step, bce_loss

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "best.owaf"
HISTORY_NAME = "history.jsonl"


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    batch: int = 4
    epochs: int = 20
    plateau_patience: int = 5
    lr_factor: float = 0.1
    val_subset: int = 300
    seed: int = 1
    shuffle: bool = True
    plateau_tol: float = 1e-6

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        for name in ("batch", "plateau_patience", "val_subset"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if int(self.epochs) < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if not 0 < self.lr_factor < 1:
            raise ConfigError(f"lr_factor must lie in (0, 1), got {self.lr_factor}")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int | None = None
    best_val_loss: float = math.inf

    @property
    def lrs(self):
        return [e["lr"] for e in self.epochs]


def _stack(samples, idx):
    x = np.concatenate([samples[i][0] for i in idx], axis=0)
    y = np.stack([samples[i][1] for i in idx])[:, None]
    return x, y


def dataset_loss(model: OwaModel, samples, batch: int) -> float:
    """Global-pixel-mean BCE over ``samples`` (pairs of stacked maps and mask)."""
    total, count = 0.0, 0
    for start in range(0, len(samples), batch):
        x, y = _stack(samples, range(start, min(start + batch, len(samples))))
        loss, _ = bce_loss(forward(model, x), y)
        total += loss * y.size
        count += y.size
    return total / count


def train_step(model: OwaModel, state: AdamState, x, y, lr: float) -> float:
    cache = {}
    pred = forward(model, x, cache=cache)
    loss, grad = bce_loss(pred, y)
    if not math.isfinite(loss):
        return loss
    grads = backward(model, cache, grad)
    adam_step(model.params, grads, state, lr)
    return loss


def train(model: OwaModel, manifest: Manifest, config: TrainConfig, out_dir, progress=None):
    """Train ``model`` in place; returns ``(best checkpoint path, TrainHistory)``.

    ``progress``, if given, is called with each epoch's history entry.
    """
    train_recs, val_recs = manifest.split("train"), manifest.split("val")
    if not train_recs:
        raise ConfigError("manifest has an empty train split")
    if not val_recs:
        raise ConfigError("manifest has an empty val split")
    if model.config.in_channels != manifest.k:
        raise ConfigError(f"model k={model.config.in_channels} does not match manifest k={manifest.k}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path = out_dir / CHECKPOINT_NAME
    history_path = out_dir / HISTORY_NAME

    train_set = [load_sample(manifest, r) for r in train_recs]
    val_set = [load_sample(manifest, r) for r in val_recs[:config.val_subset]]
    rng = np.random.default_rng(config.seed)
    state = AdamState.for_params(model.params)
    history = TrainHistory()
    lr = float(config.lr0)
    stale = 0
    save_checkpoint(model, best_path)
    history_path.write_text("")

    for epoch in range(int(config.epochs)):
        order = rng.permutation(len(train_set)) if config.shuffle else np.arange(len(train_set))
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(order), config.batch)):
            x, y = _stack(train_set, order[start:start + config.batch])
            loss = train_step(model, state, x, y, lr)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite training loss {loss} at epoch {epoch}, batch {b}",
                                   epoch=epoch, batch=b, loss=loss)
            total += loss * y.size
            count += y.size
        val_loss = dataset_loss(model, val_set, config.batch)
        if not math.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}", epoch=epoch, loss=val_loss)
        entry = {"epoch": epoch, "train_loss": total / count, "val_loss": val_loss, "lr": lr}
        history.epochs.append(entry)
        with history_path.open("a") as fh:
            fh.write(json.dumps(entry) + "\n")

        if val_loss < history.best_val_loss - config.plateau_tol:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            save_checkpoint(model, best_path)
            stale = 0
        else:
            stale += 1
            if stale >= config.plateau_patience:
                lr *= config.lr_factor
                stale = 0
                log.info("plateau: learning rate reduced to %g", lr)
        log.info("epoch %d train %.6f val %.6f lr %g", epoch, entry["train_loss"], val_loss, entry["lr"])
        if progress is not None:
            progress(entry)
    return best_path, history


def read_history(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
