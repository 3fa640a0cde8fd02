"""Architecture description, parameter layout, counting and seeded initialization.

Serialization order (flat weight array): for each recurrent layer ``l``
``rnn{l}.W`` (2, d_l, G*h), ``rnn{l}.U`` (2, h, G*h), ``rnn{l}.b`` (2, G*h),
then for each dense layer ``k`` ``dense{k}.W`` (in, out), ``dense{k}.b`` (out,).
Arrays are flattened in C order.  Axis 0 of recurrent arrays is the direction
(0 = forward in time, 1 = backward).  Gate blocks along the last axis are
``i, f, o, g`` for LSTM (G = 4) and ``z, r, n`` for GRU (G = 3).

Initial values come from numpy's PCG64 bit generator seeded with the integer
seed and are drawn in serialization order: input and dense weights
uniform(+-sqrt(6 / (fan_in + fan_out))), recurrent weights uniform with
fan_in = h and fan_out = G*h, biases zero, LSTM forget-gate bias one.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

CELLS = {"BiLSTM": 4, "BiGRU": 3}


class ArchitectureError(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    cell: str = "BiLSTM"
    input_channels: int = 9
    recurrent_layers: int = 2
    hidden_size: int = 56
    dense_layers: int = 2
    dense_width: int = 32
    dropout: float = 0.5

    def __post_init__(self):
        if self.cell not in CELLS:
            raise ArchitectureError(f"cell must be one of {sorted(CELLS)}, got {self.cell!r}")
        if not 1 <= self.recurrent_layers <= 4:
            raise ArchitectureError("recurrent_layers must be in 1..4")
        if not 1 <= self.dense_layers <= 3:
            raise ArchitectureError("dense_layers must be in 1..3")
        if self.input_channels < 1 or self.hidden_size < 1 or self.dense_width < 1:
            raise ArchitectureError("sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ArchitectureError("dropout must be in [0, 1)")

    @property
    def gates(self) -> int:
        return CELLS[self.cell]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "Architecture":
        return cls(**d)

    def dense_sizes(self) -> list[tuple[int, int]]:
        sizes = []
        width = 2 * self.hidden_size
        for _ in range(self.dense_layers - 1):
            sizes.append((width, self.dense_width))
            width = self.dense_width
        sizes.append((width, 1))
        return sizes


def param_shapes(arch: Architecture) -> list[tuple[str, tuple]]:
    g, h = arch.gates, arch.hidden_size
    shapes = []
    d = arch.input_channels
    for layer in range(arch.recurrent_layers):
        shapes += [
            (f"rnn{layer}.W", (2, d, g * h)),
            (f"rnn{layer}.U", (2, h, g * h)),
            (f"rnn{layer}.b", (2, g * h)),
        ]
        d = 2 * h
    for k, (fan_in, fan_out) in enumerate(arch.dense_sizes()):
        shapes += [(f"dense{k}.W", (fan_in, fan_out)), (f"dense{k}.b", (fan_out,))]
    return shapes


def count_params(arch: Architecture) -> int:
    """Closed-form trainable-parameter count."""
    g, h = arch.gates, arch.hidden_size
    total = 0
    d = arch.input_channels
    for _ in range(arch.recurrent_layers):
        total += 2 * g * (h * (d + h) + h)
        d = 2 * h
    for fan_in, fan_out in arch.dense_sizes():
        total += fan_in * fan_out + fan_out
    return total


class ModelParams:
    """Named parameter arrays plus a version counter bumped on every update."""

    def __init__(self, arch: Architecture, arrays: dict):
        self.arch = arch
        self.arrays = arrays
        self.version = 0

    def __getitem__(self, name):
        return self.arrays[name]

    def names(self):
        return [n for n, _ in param_shapes(self.arch)]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.arrays[n].ravel() for n in self.names()])

    @classmethod
    def from_flat(cls, arch: Architecture, flat) -> "ModelParams":
        flat = np.asarray(flat, dtype=np.float64)
        arrays = {}
        pos = 0
        for name, shape in param_shapes(arch):
            size = int(np.prod(shape))
            if pos + size > flat.size:
                raise ArchitectureError("flat weight array too short for architecture")
            arrays[name] = flat[pos : pos + size].reshape(shape).copy()
            pos += size
        if pos != flat.size:
            raise ArchitectureError("flat weight array too long for architecture")
        return cls(arch, arrays)

    def copy(self) -> "ModelParams":
        out = ModelParams(self.arch, {k: v.copy() for k, v in self.arrays.items()})
        return out

    def size(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def init_params(arch: Architecture, seed: int = 7) -> ModelParams:
    rng = make_rng(seed)
    g, h = arch.gates, arch.hidden_size
    arrays = {}
    for name, shape in param_shapes(arch):
        kind = name.split(".")[1]
        if kind == "b":
            arr = np.zeros(shape)
            if arch.cell == "BiLSTM" and name.startswith("rnn"):
                arr[:, h : 2 * h] = 1.0
        else:
            if name.startswith("rnn") and kind == "U":
                fan_in, fan_out = h, g * h
            elif name.startswith("rnn"):
                fan_in, fan_out = shape[1], shape[2]
            else:
                fan_in, fan_out = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            arr = rng.uniform(-limit, limit, size=shape)
        arrays[name] = arr
    return ModelParams(arch, arrays)
