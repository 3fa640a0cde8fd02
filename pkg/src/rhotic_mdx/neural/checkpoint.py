"""JSON checkpoints: architecture, flat weights in serialization order, seed and config hash."""

from __future__ import annotations

import json
from pathlib import Path

from .params import Architecture, ModelParams, param_shapes
from .training import TrainConfig, TrainedModel, config_hash

FORMAT = "rhotic-mdx-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def checkpoint_document(model: TrainedModel) -> dict:
    arch = model.architecture
    return {
        "format": FORMAT,
        "version": VERSION,
        "architecture": arch.to_dict(),
        "layout": [[name, list(shape)] for name, shape in param_shapes(arch)],
        "weights": [float(v) for v in model.params.flat()],
        "seed": model.config.seed,
        "train_config": model.config.to_dict(),
        "config_hash": config_hash(arch, model.config),
        "class_weights": list(model.weights),
        "best_epoch": model.best_epoch,
        "stopped_epoch": model.stopped_epoch,
        "best_val_loss": model.best_val_loss,
        "curve": model.curve,
    }


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def save_checkpoint(model: TrainedModel, path) -> None:
    Path(path).write_text(dumps(checkpoint_document(model)))


def load_checkpoint(path) -> TrainedModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} document")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    arch = Architecture.from_dict(doc["architecture"])
    config = TrainConfig.from_dict(doc["train_config"])
    if config_hash(arch, config) != doc["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch")
    params = ModelParams.from_flat(arch, doc["weights"])
    return TrainedModel(
        arch,
        config,
        params,
        doc["best_epoch"],
        doc["stopped_epoch"],
        doc["best_val_loss"],
        tuple(doc["class_weights"]),
        doc["curve"],
    )
