"""Bidirectional LSTM/GRU classifier: forward pass, weighted cross-entropy, BPTT.

Both directions of a recurrent layer are processed together: arrays carry a
leading direction axis and the backward direction runs over the time-reversed
input.  Sequences are time-major internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ModelParams

PROB_CLIP = 1e-7


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    pass


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class Cache:
    params_id: int
    version: int
    mode: str
    batch: int
    steps: int
    layers: list = field(default_factory=list)
    dense_inputs: list = field(default_factory=list)
    dense_pre: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    probs: np.ndarray | None = None


# -- recurrent layers ------------------------------------------------------
# Layout: (direction, time, batch, features); H and C carry an extra leading
# time step holding the zero initial state.


def _input_projection(X, W, b):
    """Per-direction input projections (2, T, B, G) and the direction inputs."""
    T, B, d = X.shape
    G = W.shape[-1]
    Xd = np.empty((2, T, B, d))
    Xd[0] = X
    Xd[1] = X[::-1]
    XW = np.empty((2, T, B, G))
    for z in range(2):
        out = XW[z].reshape(T * B, G)
        np.dot(Xd[z].reshape(T * B, d), W[z], out=out)
        out += b[z]
    return Xd, XW


def _lstm_forward(X, W, U, b):
    T, B, _ = X.shape
    h = U.shape[1]
    Xd, XW = _input_projection(X, W, b)
    H = np.zeros((2, T + 1, B, h))
    C = np.zeros((2, T + 1, B, h))
    S = np.empty((2, T, B, 3 * h))
    Gc = np.empty((2, T, B, h))
    TC = np.empty((2, T, B, h))
    for t in range(T):
        a = XW[:, t] + np.matmul(H[:, t], U)
        s = sigmoid(a[..., : 3 * h])
        g = np.tanh(a[..., 3 * h :])
        c = s[..., h : 2 * h] * C[:, t] + s[..., :h] * g
        tc = np.tanh(c)
        H[:, t + 1] = s[..., 2 * h :] * tc
        C[:, t + 1] = c
        S[:, t], Gc[:, t], TC[:, t] = s, g, tc
    return {"Xd": Xd, "H": H, "C": C, "S": S, "G": Gc, "TC": TC}


def _lstm_backward(cache, dH, W, U, need_input_grad):
    H, C, S, Gc, TC, Xd = cache["H"], cache["C"], cache["S"], cache["G"], cache["TC"], cache["Xd"]
    _, T, B, h = dH.shape
    Ut = np.ascontiguousarray(U.transpose(0, 2, 1))
    dA = np.empty((2, T, B, 4 * h))
    dh_next = np.zeros((2, B, h))
    dc_next = np.zeros((2, B, h))
    for t in range(T - 1, -1, -1):
        s, g, tc = S[:, t], Gc[:, t], TC[:, t]
        i, f, o = s[..., :h], s[..., h : 2 * h], s[..., 2 * h :]
        dh = dH[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        da = np.empty((2, B, 4 * h))
        da[..., :h] = dc * g * i * (1.0 - i)
        da[..., h : 2 * h] = dc * C[:, t] * f * (1.0 - f)
        da[..., 2 * h : 3 * h] = dh * tc * o * (1.0 - o)
        da[..., 3 * h :] = dc * i * (1.0 - g * g)
        dA[:, t] = da
        dc_next = dc * f
        dh_next = np.matmul(da, Ut)
    grads = _param_grads(Xd, dA, W, need_input_grad)
    grads["U"] = _time_batch_outer(H[:, :-1], dA)
    return grads


def _gru_forward(X, W, U, b):
    T, B, _ = X.shape
    h = U.shape[1]
    Xd, XW = _input_projection(X, W, b)
    U_zr = np.ascontiguousarray(U[..., : 2 * h])
    U_n = np.ascontiguousarray(U[..., 2 * h :])
    H = np.zeros((2, T + 1, B, h))
    ZR = np.empty((2, T, B, 2 * h))
    N = np.empty((2, T, B, h))
    RH = np.empty((2, T, B, h))
    for t in range(T):
        hp = H[:, t]
        xw = XW[:, t]
        zr = sigmoid(xw[..., : 2 * h] + np.matmul(hp, U_zr))
        rh = zr[..., h:] * hp
        n = np.tanh(xw[..., 2 * h :] + np.matmul(rh, U_n))
        H[:, t + 1] = n + zr[..., :h] * (hp - n)
        ZR[:, t], N[:, t], RH[:, t] = zr, n, rh
    return {"Xd": Xd, "H": H, "ZR": ZR, "N": N, "RH": RH}


def _gru_backward(cache, dH, W, U, need_input_grad):
    H, ZR, N, RH, Xd = cache["H"], cache["ZR"], cache["N"], cache["RH"], cache["Xd"]
    _, T, B, h = dH.shape
    Ut_zr = np.ascontiguousarray(U[..., : 2 * h].transpose(0, 2, 1))
    Ut_n = np.ascontiguousarray(U[..., 2 * h :].transpose(0, 2, 1))
    dA = np.empty((2, T, B, 3 * h))
    dh_next = np.zeros((2, B, h))
    for t in range(T - 1, -1, -1):
        hp = H[:, t]
        z, r, n = ZR[:, t, :, :h], ZR[:, t, :, h:], N[:, t]
        dh = dH[:, t] + dh_next
        da = np.empty((2, B, 3 * h))
        dan = dh * (1.0 - z) * (1.0 - n * n)
        drh = np.matmul(dan, Ut_n)
        da[..., :h] = dh * (hp - n) * z * (1.0 - z)
        da[..., h : 2 * h] = drh * hp * r * (1.0 - r)
        da[..., 2 * h :] = dan
        dA[:, t] = da
        dh_next = dh * z + drh * r + np.matmul(da[..., : 2 * h], Ut_zr)
    grads = _param_grads(Xd, dA, W, need_input_grad)
    # the candidate block of U acts on r*h, not h
    dU = np.empty_like(U)
    dU[..., : 2 * h] = _time_batch_outer(H[:, :-1], dA[..., : 2 * h])
    dU[..., 2 * h :] = _time_batch_outer(RH, dA[..., 2 * h :])
    grads["U"] = dU
    return grads


def _time_batch_outer(A, B):
    """Sum over time and batch of A^T B per direction: (2,T,B,m),(2,T,B,n) -> (2,m,n)."""
    m, n = A.shape[-1], B.shape[-1]
    out = np.empty((2, m, n))
    for z in range(2):
        a = A[z].reshape(-1, m)
        b = B[z].reshape(-1, n)
        np.dot(a.T, b, out=out[z])
    return out


def _param_grads(Xd, dA, W, need_input_grad):
    _, T, nb, d = Xd.shape
    grads = {"W": _time_batch_outer(Xd, dA), "b": dA.sum(axis=(1, 2))}
    if need_input_grad:
        G = dA.shape[-1]
        dX = np.dot(dA[0].reshape(T * nb, G), W[0].T).reshape(T, nb, d)
        dX += np.dot(dA[1].reshape(T * nb, G), W[1].T).reshape(T, nb, d)[::-1]
        grads["X"] = dX
    return grads


_FORWARD = {"BiLSTM": _lstm_forward, "BiGRU": _gru_forward}
_BACKWARD = {"BiLSTM": _lstm_backward, "BiGRU": _gru_backward}


def _layer_sequence(H):
    """Layer output in original time order, (T, B, 2h)."""
    return np.concatenate([H[0, 1:], H[1, 1:][::-1]], axis=-1)


# -- full model ------------------------------------------------------------


def forward(params: ModelParams, batch, mode: str = "eval", dropout_rng=None):
    """Probabilities (B, 1) for a (B, T, C) batch, plus the activation cache."""
    arch = params.arch
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != arch.input_channels:
        raise ShapeError(f"expected batch of shape (B, T, {arch.input_channels}), got {x.shape}")
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    use_dropout = mode == "train" and arch.dropout > 0
    if use_dropout and dropout_rng is None:
        raise ValueError("train mode with dropout needs a dropout_rng")
    B, T, _ = x.shape
    cache = Cache(id(params), params.version, mode, B, T)
    seq = np.ascontiguousarray(x.transpose(1, 0, 2))
    fwd = _FORWARD[arch.cell]
    for layer in range(arch.recurrent_layers):
        lc = fwd(seq, params[f"rnn{layer}.W"], params[f"rnn{layer}.U"], params[f"rnn{layer}.b"])
        cache.layers.append(lc)
        if layer < arch.recurrent_layers - 1:
            seq = _layer_sequence(lc["H"])
    H = cache.layers[-1]["H"]
    v = np.concatenate([H[0, T], H[1, T]], axis=-1)
    n_dense = arch.dense_layers
    keep = 1.0 - arch.dropout
    for k in range(n_dense):
        mask = None
        if use_dropout:
            mask = (dropout_rng.random(v.shape) < keep) / keep
            v = v * mask
        cache.masks.append(mask)
        cache.dense_inputs.append(v)
        z = v @ params[f"dense{k}.W"] + params[f"dense{k}.b"]
        if k < n_dense - 1:
            cache.dense_pre.append(z)
            v = np.maximum(z, 0.0)
        else:
            probs = sigmoid(z)
    cache.probs = probs
    return probs, cache


def predict(params: ModelParams, x, batch_size: int = 128) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = [forward(params, x[i : i + batch_size], "eval")[0][:, 0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def weighted_ce_loss(probs, labels, weights=(1.0, 1.0)) -> float:
    """Mean of ``-w_y [y ln p + (1-y) ln(1-p)]`` with p clipped to [1e-7, 1-1e-7]."""
    p = np.clip(np.asarray(probs, dtype=np.float64).reshape(-1), PROB_CLIP, 1.0 - PROB_CLIP)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    w = np.where(y > 0.5, weights[1], weights[0])
    return float(-np.mean(w * (y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def _loss_logit_grad(probs, labels, weights):
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    w = np.where(y > 0.5, weights[1], weights[0])
    inside = (p > PROB_CLIP) & (p < 1.0 - PROB_CLIP)  # clipped probabilities have zero slope
    return (w * (p - y) * inside / p.shape[0])[:, None]


def backward(params: ModelParams, cache: Cache, labels, weights=(1.0, 1.0)) -> dict:
    """Exact gradients of ``weighted_ce_loss`` for the cached forward pass."""
    if cache.params_id != id(params) or cache.version != params.version:
        raise StaleCacheError("cache was produced with different or since-updated parameters")
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if labels.shape[0] != cache.batch:
        raise ShapeError(f"{labels.shape[0]} labels for a batch of {cache.batch}")
    arch = params.arch
    grads = {}
    dz = _loss_logit_grad(cache.probs, labels, weights)
    for k in range(arch.dense_layers - 1, -1, -1):
        grads[f"dense{k}.W"] = cache.dense_inputs[k].T @ dz
        grads[f"dense{k}.b"] = dz.sum(axis=0)
        dv = dz @ params[f"dense{k}.W"].T
        if cache.masks[k] is not None:
            dv = dv * cache.masks[k]
        if k > 0:
            dz = dv * (cache.dense_pre[k - 1] > 0)
    h = arch.hidden_size
    T, B = cache.steps, cache.batch
    dH = np.zeros((2, T, B, h))
    dH[0, T - 1] = dv[:, :h]
    dH[1, T - 1] = dv[:, h:]
    bwd = _BACKWARD[arch.cell]
    for layer in range(arch.recurrent_layers - 1, -1, -1):
        W, U = params[f"rnn{layer}.W"], params[f"rnn{layer}.U"]
        g = bwd(cache.layers[layer], dH, W, U, need_input_grad=layer > 0)
        grads[f"rnn{layer}.W"] = g["W"]
        grads[f"rnn{layer}.U"] = g["U"]
        grads[f"rnn{layer}.b"] = g["b"]
        if layer > 0:
            dX = g["X"]
            dH = np.empty((2, T, B, h))
            dH[0] = dX[..., :h]
            dH[1] = dX[::-1, :, h:]
    return grads
