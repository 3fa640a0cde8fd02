"""SGD, RMSprop and Adam updates applied in place to ModelParams."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMIZERS = ("ADAM", "RMSPROP", "SGD")

RMS_RHO = 0.9
RMS_EPS = 1e-7
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class DivergenceError(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    name: str
    learning_rate: float
    step: int = 0
    slots: dict = field(default_factory=dict)


def make_optimizer(name: str, learning_rate: float) -> OptimizerState:
    name = name.upper()
    if name not in OPTIMIZERS:
        raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {name!r}")
    if not learning_rate > 0:
        raise ValueError("learning rate must be positive")
    return OptimizerState(name, float(learning_rate))


def optimizer_step(state: OptimizerState, params, grads: dict) -> tuple[OptimizerState, object]:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"diverged: non-finite gradient for {name}")
    state.step += 1
    lr = state.learning_rate
    for name, g in grads.items():
        p = params.arrays[name]
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        if state.name == "SGD":
            p -= lr * g
        elif state.name == "RMSPROP":
            acc = state.slots.setdefault(name, np.zeros_like(p))
            acc *= RMS_RHO
            acc += (1.0 - RMS_RHO) * g * g
            p -= lr * g / (np.sqrt(acc) + RMS_EPS)
        else:
            m, v = state.slots.setdefault(name, (np.zeros_like(p), np.zeros_like(p)))
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            m_hat = m / (1.0 - ADAM_BETA1**state.step)
            v_hat = v / (1.0 - ADAM_BETA2**state.step)
            p -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    params.version += 1
    return state, params
