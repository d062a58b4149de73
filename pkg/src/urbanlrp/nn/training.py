"""Mini-batch training with class weighting, early stopping and best-weight restore."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, TrainingDiverged
from ..rng import Xoshiro256
from .model import LOG_EPS, loss_and_grads
from .optim import NadamState, nadam_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    max_epochs: int = 80
    patience: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    seed: int = 0
    class_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.patience >= self.max_epochs:
            raise ConfigurationError("patience must be smaller than max_epochs")
        if self.lr < 0:
            raise ConfigurationError("learning rate must be non-negative")
        if self.batch_size <= 0:
            raise ConfigurationError("batch size must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainReport:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
            for r in self.history:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.train_acc), repr(r.val_loss), repr(r.val_acc)])


class EarlyStopping:
    """Tracks the best validation loss; asks to stop after ``patience`` epochs without a strict improvement."""

    def __init__(self, patience):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch, val_loss):
        """Record an epoch; returns True when this epoch is a new best."""
        if val_loss < self.best:
            self.best, self.best_epoch, self.wait = val_loss, epoch, 0
            return True
        self.wait += 1
        return False

    @property
    def should_stop(self):
        return self.wait >= self.patience


def evaluate_loss(model, x, y, batch_size=64):
    """Unweighted mean cross-entropy and accuracy in inference mode."""
    probs = model.predict(x, batch_size)
    py = probs[np.arange(len(y)), y]
    return float(np.mean(-np.log(np.maximum(py, LOG_EPS)))), float(np.mean(probs.argmax(axis=1) == y))


def train(model, x_train, y_train, x_val, y_val, config=None, on_epoch=None):
    config = config or TrainConfig()
    y_train = np.asarray(y_train, dtype=np.int64)
    y_val = np.asarray(y_val, dtype=np.int64)
    if len(y_train) == 0 or len(y_val) == 0:
        raise ConfigurationError("train and validation splits must be non-empty")
    cw = np.ones(model.n_classes) if config.class_weights is None else np.asarray(config.class_weights, dtype=np.float64)
    shuffler = Xoshiro256(config.seed)
    model.reseed(config.seed + 1)
    state = NadamState()
    stopper = EarlyStopping(config.patience)
    report = TrainReport()
    best = model.snapshot()
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        order = shuffler.permutation(len(y_train))
        losses, correct, seen = [], 0, 0
        for b, start in enumerate(range(0, len(order), config.batch_size), start=1):
            idx = order[start:start + config.batch_size]
            yb = y_train[idx]
            loss, grads, probs = loss_and_grads(model, x_train[idx], yb, cw[yb], return_probs=True)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, b)
            params = {(i, name): a for i, name, a in model.parameters()}
            nadam_step(params, grads, state, config.lr, config.beta1, config.beta2, config.eps)
            for (i, name), a in params.items():
                model.layers[i].params[name] = a
            losses.append(loss * len(idx))
            correct += int(np.sum(probs.argmax(axis=1) == yb))
            seen += len(idx)
        model.eval()
        train_loss, train_acc = float(np.sum(losses) / seen), correct / seen
        val_loss, val_acc = evaluate_loss(model, x_val, y_val)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(epoch, 0)
        report.history.append(EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc))
        if stopper.update(epoch, val_loss):
            best = model.snapshot()
        log.info("epoch %d loss %.4f acc %.3f val_loss %.4f val_acc %.3f", epoch, train_loss, train_acc, val_loss, val_acc)
        if on_epoch is not None:
            on_epoch(report.history[-1])
        if stopper.should_stop:
            break
    report.best_epoch = stopper.best_epoch
    report.stopped_epoch = epoch
    model.restore(best)
    model.eval()
    return report
