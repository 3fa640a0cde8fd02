"""From-scratch bidirectional recurrent classifier (numpy, float64)."""

from .checkpoint import load_checkpoint, save_checkpoint
from .network import backward, forward, predict, weighted_ce_loss
from .optim import DivergenceError, make_optimizer, optimizer_step
from .params import Architecture, ModelParams, count_params, init_params, param_shapes
from .search import SEARCH_GRID, expand_grid, grid_search, select_best
from .training import EarlyStopping, TrainConfig, TrainedModel, train

__all__ = [
    "Architecture",
    "DivergenceError",
    "EarlyStopping",
    "ModelParams",
    "SEARCH_GRID",
    "TrainConfig",
    "TrainedModel",
    "backward",
    "count_params",
    "expand_grid",
    "forward",
    "grid_search",
    "init_params",
    "load_checkpoint",
    "make_optimizer",
    "optimizer_step",
    "param_shapes",
    "predict",
    "save_checkpoint",
    "select_best",
    "train",
    "weighted_ce_loss",
]
