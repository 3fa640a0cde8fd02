"""Mini-batch training with weighted cross-entropy and early stopping."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..dataset import class_weights as inverse_frequency_weights
from .network import backward, forward, predict, weighted_ce_loss
from .optim import DivergenceError, make_optimizer, optimizer_step
from .params import Architecture, ModelParams, init_params

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 64
    optimizer: str = "ADAM"
    max_epochs: int = 50
    patience: int = 5
    seed: int = 7
    min_delta: float = 1e-6

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        return cls(**d)


def config_hash(arch: Architecture, config: TrainConfig) -> str:
    doc = json.dumps({"architecture": arch.to_dict(), "train": config.to_dict()}, sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()


class EarlyStopping:
    """Stop after ``patience`` epochs without a decrease of at least ``min_delta``."""

    def __init__(self, patience: int = 5, min_delta: float = 1e-6):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, loss: float) -> tuple[bool, bool]:
        """Returns (improved, should_stop)."""
        if loss < self.best - self.min_delta:
            self.best = loss
            self.best_epoch = epoch
            self.wait = 0
            return True, False
        self.wait += 1
        return False, self.wait >= self.patience


@dataclass
class TrainedModel:
    architecture: Architecture
    config: TrainConfig
    params: ModelParams
    best_epoch: int
    stopped_epoch: int
    best_val_loss: float
    weights: tuple
    curve: list = field(default_factory=list)  # per epoch {"epoch", "train_loss", "val_loss"}

    def predict(self, x) -> np.ndarray:
        return predict(self.params, x)


def train(
    arch: Architecture,
    config: TrainConfig,
    train_set: tuple,
    val_set: tuple,
    weights: tuple | None = None,
) -> TrainedModel:
    """Fit from a seeded initialization; returns the best-validation-loss parameters.

    ``train_set`` and ``val_set`` are ``(x, y)`` with ``x`` of shape
    (N, T, C).  Class weights default to inverse frequency on ``train_set``
    and are applied to both training and validation loss.
    """
    x_tr, y_tr = (np.asarray(a, dtype=np.float64) for a in train_set)
    x_va, y_va = (np.asarray(a, dtype=np.float64) for a in val_set)
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if weights is None:
        weights = inverse_frequency_weights(y_tr)
    weights = tuple(float(w) for w in weights)

    params = init_params(arch, config.seed)
    opt = make_optimizer(config.optimizer, config.learning_rate)
    shuffle_rng = np.random.Generator(np.random.PCG64([config.seed, 1]))
    dropout_rng = np.random.Generator(np.random.PCG64([config.seed, 2]))
    stopper = EarlyStopping(config.patience, config.min_delta)
    best = params.copy()
    curve = []
    n = len(x_tr)
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            probs, cache = forward(params, x_tr[idx], "train", dropout_rng)
            loss = weighted_ce_loss(probs, y_tr[idx], weights)
            if not np.isfinite(loss):
                raise DivergenceError(f"diverged: non-finite training loss at epoch {epoch}")
            total += loss * len(idx)
            grads = backward(params, cache, y_tr[idx], weights)
            optimizer_step(opt, params, grads)
        train_loss = total / n
        val_loss = weighted_ce_loss(predict(params, x_va), y_va, weights)
        if not np.isfinite(val_loss):
            raise DivergenceError(f"diverged: non-finite validation loss at epoch {epoch}")
        curve.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        improved, stop = stopper.update(epoch, val_loss)
        log.debug("epoch %d train %.5f val %.5f%s", epoch, train_loss, val_loss, " *" if improved else "")
        if improved:
            best = params.copy()
        if stop:
            break
    return TrainedModel(arch, config, best, stopper.best_epoch, epoch, stopper.best, weights, curve)
