"""Exhaustive hyperparameter grid search scored by mean best validation loss."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

from .params import Architecture, count_params
from .training import TrainConfig, train

log = logging.getLogger(__name__)

# candidate values searched for the recurrent classifier
SEARCH_GRID = {
    "learning_rate": [1e-4, 3e-4, 1e-3, 1e-2],
    "batch_size": [16, 32, 64, 128],
    "optimizer": ["ADAM", "RMSPROP", "SGD"],
    "recurrent_layers": [1, 2, 3, 4],
    "dense_layers": [1, 2, 3],
    "dropout": [0.3, 0.5, 0.7],
}

_ARCH_KEYS = {f for f in Architecture.__dataclass_fields__}
_TRAIN_KEYS = {f for f in TrainConfig.__dataclass_fields__}


@dataclass
class GridResult:
    architecture: Architecture
    config: TrainConfig
    rows: list  # one dict per grid point, in grid order
    models: list = field(default_factory=list)  # best point's TrainedModel per fold


def expand_grid(grid: dict, base_arch: Architecture, base_config: TrainConfig):
    """Cartesian product of the grid in key order, applied over the base settings."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("grid must have at least one value per key")
    keys = list(grid)
    unknown = set(keys) - _ARCH_KEYS - _TRAIN_KEYS
    if unknown:
        raise ValueError(f"unknown grid keys: {sorted(unknown)}")
    points = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        values = dict(zip(keys, combo))
        arch = replace(base_arch, **{k: v for k, v in values.items() if k in _ARCH_KEYS})
        cfg = replace(base_config, **{k: v for k, v in values.items() if k in _TRAIN_KEYS})
        points.append((values, arch, cfg))
    return points


def select_best(rows: list) -> int:
    """Index of the lowest score; ties go to fewer parameters, then grid order."""
    if not rows:
        raise ValueError("no grid rows to select from")
    return min(range(len(rows)), key=lambda i: (rows[i]["score"], rows[i]["n_params"], i))


def grid_search(grid: dict, base_arch: Architecture, base_config: TrainConfig, folds, train_fn=train) -> GridResult:
    """Train every grid point on every fold.

    ``folds`` is a sequence of ``(train_set, val_set)`` pairs.  A point's
    score is the mean over folds of its best validation loss.
    """
    points = expand_grid(grid, base_arch, base_config)
    rows = []
    best_models = None
    best_key = None
    for i, (values, arch, cfg) in enumerate(points):
        models = [train_fn(arch, cfg, tr, va) for tr, va in folds]
        score = sum(m.best_val_loss for m in models) / len(models)
        row = dict(values, score=score, n_params=count_params(arch), fold_losses=[m.best_val_loss for m in models])
        rows.append(row)
        key = (score, row["n_params"], i)
        if best_key is None or key < best_key:
            best_key, best_models = key, models
        log.info("grid point %d/%d %s score %.5f", i + 1, len(points), values, score)
    i = select_best(rows)
    return GridResult(points[i][1], points[i][2], rows, best_models)
