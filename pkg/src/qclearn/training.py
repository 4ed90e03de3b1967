"""Mini-batch training loop with validation early stopping and warm starts."""

from __future__ import annotations

import csv
import hashlib
import io
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import Dataset, require_nonempty
from .errors import NumericFailure, ShapeMismatch
from .nn.checkpoint import ModelCheckpoint
from .nn.layers import bce_loss
from .nn.model import ModelConfig, ScalableCNN
from .nn.optim import AdamHyper, AdamState, adam_step

BATCH_RANGE = (128, 512)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    max_epochs: int = 100
    val_fraction: float = 0.05
    patience: int = 10
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_patience: int | None = None  # halve lr after this many epochs without improvement
    max_steps: int | None = None
    allow_any_batch: bool = False

    def __post_init__(self):
        lo, hi = BATCH_RANGE
        if not self.allow_any_batch and not lo <= self.batch_size <= hi:
            raise ValueError(f"batch size {self.batch_size} outside [{lo}, {hi}]; "
                             "set allow_any_batch to override")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch size and max epochs must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("validation fraction must lie in [0, 1)")

    @property
    def hyper(self) -> AdamHyper:
        return AdamHyper(self.lr, self.beta1, self.beta2, self.eps)


@dataclass
class EpochRecord:
    epoch: int
    steps: int
    train_loss: float
    val_loss: float | None
    lr: float


@dataclass
class TrainResult:
    model: ScalableCNN
    history: list[EpochRecord]
    best_epoch: int
    best_val_loss: float | None
    steps: int
    seconds: float
    metadata: dict = field(default_factory=dict)

    def checkpoint(self) -> ModelCheckpoint:
        return ModelCheckpoint.from_model(self.model, self.metadata)

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "steps", "train_loss", "val_loss", "lr"])
        for r in self.history:
            w.writerow([r.epoch, r.steps, repr(r.train_loss),
                        "" if r.val_loss is None else repr(r.val_loss), repr(r.lr)])
        return buf.getvalue()

    def write_curve(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.curve_csv())
        return path


def _split_rows(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    n_val = int(round(fraction * n))
    if fraction > 0 and n >= 2:
        n_val = min(max(n_val, 1), n - 1)
    else:
        n_val = 0
    order = np.random.default_rng([seed, 2]).permutation(n)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def initial_model(model_config: ModelConfig | None, init: ModelCheckpoint | ScalableCNN | None,
                  seed: int) -> ScalableCNN:
    if init is not None:
        model = init.model() if isinstance(init, ModelCheckpoint) else init.copy()
        if model_config is not None and model_config != model.config:
            raise ShapeMismatch("init checkpoint architecture differs from the requested config")
        return model
    return ScalableCNN.create(model_config or ModelConfig(), seed=seed)


def mean_loss(model: ScalableCNN, x: np.ndarray, y: np.ndarray, batch_size: int = 512) -> float:
    pred = model.predict(x, batch_size=batch_size)
    return bce_loss(pred, y)


def train(dataset: Dataset, config: TrainConfig = TrainConfig(),
          model_config: ModelConfig | None = None,
          init: ModelCheckpoint | ScalableCNN | None = None,
          log: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Fit a model to ``dataset`` and return the best-validation weights.

    Each epoch draws a seeded permutation of the training rows (the last
    partial batch is kept), applies Adam updates and scores the held-out
    rows in inference mode. Without a validation split the training loss
    of the epoch selects the best state instead.
    """
    require_nonempty(dataset)
    model = initial_model(model_config, init, config.seed)
    cfg = model.config
    if dataset.n_labels != cfg.n_outputs:
        raise ShapeMismatch(f"dataset has {dataset.n_labels} labels per record, "
                            f"model predicts {cfg.n_outputs}")
    if dataset.gate_set.channel_count != cfg.gate_channels:
        raise ShapeMismatch("dataset gate set does not match the model's input channels")

    x_all = dataset.encodings()
    y_all = dataset.labels
    train_rows, val_rows = _split_rows(len(dataset), config.val_fraction, config.seed)
    x_tr, y_tr = x_all[train_rows], y_all[train_rows]
    x_val, y_val = x_all[val_rows], y_all[val_rows]
    has_val = val_rows.size > 0

    shuffle = np.random.default_rng([config.seed, 1])
    state = AdamState()
    hyper = config.hyper
    best_state = model.state()
    best_loss = np.inf
    best_epoch = 0
    stale = 0
    stale_lr = 0
    steps = 0
    history: list[EpochRecord] = []
    t0 = time.perf_counter()

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle.permutation(len(train_rows))
        total, seen = 0.0, 0
        for start in range(0, order.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads, _ = model.loss_and_grads(x_tr[idx], y_tr[idx])
            if not np.isfinite(loss):
                raise NumericFailure(f"non-finite training loss at step {steps}")
            adam_step(model.params, grads, state, hyper)
            total += loss * idx.size
            seen += idx.size
            steps += 1
            if config.max_steps is not None and steps >= config.max_steps:
                break
        train_loss = total / max(seen, 1)
        val_loss = mean_loss(model, x_val, y_val) if has_val else None
        score = val_loss if has_val else train_loss
        rec = EpochRecord(epoch, steps, train_loss, val_loss, hyper.lr)
        history.append(rec)
        if log is not None:
            log(rec)
        if score < best_loss:
            best_loss, best_epoch, best_state = score, epoch, model.state()
            stale = stale_lr = 0
        else:
            stale += 1
            stale_lr += 1
            if config.lr_patience is not None and stale_lr >= config.lr_patience:
                hyper = AdamHyper(hyper.lr / 2, hyper.beta1, hyper.beta2, hyper.eps)
                stale_lr = 0
        if stale >= config.patience:
            break
        if config.max_steps is not None and steps >= config.max_steps:
            break

    model.load_state(best_state)
    result = TrainResult(model, history, best_epoch, float(best_loss) if has_val else None, steps,
                         time.perf_counter() - t0)
    result.metadata = {
        "seed": config.seed,
        "steps": steps,
        "epochs": len(history),
        "best_epoch": best_epoch,
        "best_val_loss": result.best_val_loss,
        "loss_history_sha256": hashlib.sha256(result.curve_csv().encode()).hexdigest(),
        "train_records": int(train_rows.size),
        "val_records": int(val_rows.size),
        "n_qubits": dataset.n_qubits,
        "depth": dataset.depth,
        "label_kind": dataset.label_kind,
    }
    return result
