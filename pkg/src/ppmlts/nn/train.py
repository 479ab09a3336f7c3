"""Minibatch SGD with plateau learning-rate halving and early stopping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..data import Splits, TimeSeriesDataset
from ..errors import EmptyDataset, InvalidConfig
from ..metrics import weighted_f1
from .model import Model, cross_entropy, predict, weighted_loss_and_grads

# grad_fn(model, xb, yb, rng, step) -> (mean loss, grads, logits)
GradFn = Callable[[Model, np.ndarray, np.ndarray, np.random.Generator, int], tuple]


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.01
    lr_halving_patience: int = 5
    early_stop_patience: int = 10
    min_lr: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidConfig("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if not self.min_lr > 0:
            raise InvalidConfig("min_lr must be positive")
        # learning_rate = 0 is allowed: it freezes the parameters
        if self.learning_rate < 0:
            raise InvalidConfig("learning_rate must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    train_f1: float
    val_f1: float


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    steps: int = 0
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.records)

    def best(self) -> EpochRecord:
        return self.records[self.best_epoch]


def evaluate(model: Model, ds: TimeSeriesDataset) -> tuple[float, float]:
    """Mean cross-entropy and weighted F1 in inference mode."""
    logits = predict(model, ds.samples)
    losses, _ = cross_entropy(logits, ds.labels)
    return float(losses.mean()), weighted_f1(ds.labels, logits.argmax(axis=1), model.spec.num_classes)


def plain_grads(model, xb, yb, rng, step):
    return weighted_loss_and_grads(model, xb, yb, train=True, rng=rng)


def sgd_epoch(
    model: Model,
    ds: TimeSeriesDataset,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
    grad_fn: GradFn = plain_grads,
    step0: int = 0,
) -> tuple[float, float, int]:
    """One shuffled pass of plain SGD. Returns (mean loss, running F1, steps)."""
    n = len(ds)
    perm = rng.permutation(n)
    params = model.parameters
    total_loss = 0.0
    preds = np.empty(n, dtype=np.int64)
    steps = 0
    for start in range(0, n, batch_size):
        idx = perm[start : start + batch_size]
        loss, grads, logits = grad_fn(model, ds.samples[idx], ds.labels[idx], rng, step0 + steps)
        for name, p in params.items():
            p -= lr * grads[name]
        total_loss += loss * len(idx)
        preds[start : start + len(idx)] = logits.argmax(axis=1)
        steps += 1
    f1 = weighted_f1(ds.labels[perm], preds, model.spec.num_classes)
    return total_loss / n, f1, steps


def fit_loop(
    model: Model,
    val: TimeSeriesDataset,
    config: TrainConfig,
    run_epoch: Callable[[Model, float, int], tuple[float, float, int]],
) -> History:
    """Drive ``run_epoch`` until early stopping; leaves the best snapshot in ``model``.

    ``run_epoch(model, lr, epoch)`` performs one epoch (or federated round)
    of updates in place and returns (train loss, train F1, optimizer steps).
    """
    if len(val) == 0:
        raise EmptyDataset("validation set is empty")
    history = History()
    lr = config.learning_rate
    best_state = model.state_dict()
    since_best = since_halving = 0
    for epoch in range(config.epochs):
        train_loss, train_f1, steps = run_epoch(model, lr, epoch)
        history.steps += steps
        val_loss, val_f1 = evaluate(model, val)
        history.records.append(EpochRecord(epoch, lr, train_loss, val_loss, train_f1, val_f1))
        if val_loss < history.best_val_loss:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_state = model.state_dict()
            since_best = since_halving = 0
            continue
        since_best += 1
        since_halving += 1
        if since_best >= config.early_stop_patience:
            history.stopped_early = True
            break
        if since_halving >= config.lr_halving_patience:
            if lr > config.min_lr:
                lr = max(lr / 2.0, config.min_lr)
            since_halving = 0
    model.load_state_dict(best_state)
    return history


def train_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Shuffling/dropout generator; client ``k`` of a federation uses stream ``k``."""
    return np.random.default_rng([seed, stream])


def train(
    model: Model, data: Splits, config: TrainConfig, grad_fn: GradFn = plain_grads, stream: int = 0
) -> tuple[Model, History]:
    """Train a copy of ``model`` on ``data.train``, early-stopping on ``data.val``."""
    if len(data.train) == 0:
        raise EmptyDataset("training set is empty")
    model = model.copy()
    rng = train_rng(config.seed, stream)
    steps_done = 0

    def run_epoch(m, lr, epoch):
        nonlocal steps_done
        loss, f1, steps = sgd_epoch(m, data.train, lr, config.batch_size, rng, grad_fn, steps_done)
        steps_done += steps
        return loss, f1, steps

    history = fit_loop(model, data.val, config, run_epoch)
    return model, history
