import math
import types

import numpy as np
import pytest

from oracles import gradient_check
from rhotic_mdx.neural import (
    SEARCH_GRID,
    Architecture,
    EarlyStopping,
    TrainConfig,
    backward,
    count_params,
    expand_grid,
    forward,
    grid_search,
    init_params,
    load_checkpoint,
    make_optimizer,
    optimizer_step,
    param_shapes,
    predict,
    save_checkpoint,
    select_best,
    train,
    weighted_ce_loss,
)
from rhotic_mdx.neural.checkpoint import CheckpointError, checkpoint_document
from rhotic_mdx.neural.network import ShapeError, StaleCacheError
from rhotic_mdx.neural.optim import DivergenceError
from rhotic_mdx.neural.params import ArchitectureError

TINY = Architecture(cell="BiLSTM", input_channels=3, recurrent_layers=1, hidden_size=3, dense_layers=2, dense_width=4, dropout=0.3)


def _swap_halves(a, h, axis):
    idx = np.r_[h : 2 * h, 0:h]
    return np.take(a, idx, axis=axis)


# -- parameters ----------------------------------------------------------------


def _tally(arch, prefix):
    return sum(int(np.prod(shape)) for name, shape in param_shapes(arch) if name.startswith(prefix))


def test_count_examples():
    # dense 10 -> 2 (h = 5 per direction, dense width 2)
    assert _tally(Architecture(input_channels=1, recurrent_layers=1, hidden_size=5, dense_width=2), "dense0") == 22
    assert _tally(Architecture(input_channels=9, recurrent_layers=1, hidden_size=8), "rnn0") == 1152
    assert count_params(Architecture(input_channels=9)) == 108_929
    assert count_params(Architecture(input_channels=5)) == 107_137


def test_single_dense_layer_count():
    # one BiLSTM layer with h = 5 feeds a 10 -> 1 dense layer: 11 dense parameters
    arch = Architecture(input_channels=2, recurrent_layers=1, hidden_size=5, dense_layers=1)
    assert count_params(arch) == 2 * 4 * (5 * 7 + 5) + 11


@pytest.mark.parametrize("seed", range(10))
def test_count_matches_layout(seed):
    rng = np.random.default_rng(seed)
    arch = Architecture(
        cell=str(rng.choice(["BiLSTM", "BiGRU"])),
        input_channels=int(rng.choice([5, 6, 9, 14])),
        recurrent_layers=int(rng.integers(1, 5)),
        hidden_size=int(rng.integers(1, 20)),
        dense_layers=int(rng.integers(1, 4)),
        dense_width=int(rng.integers(1, 40)),
    )
    assert count_params(arch) == init_params(arch, 0).flat().size


def test_init_determinism_and_forget_bias():
    a, b = init_params(TINY, 7), init_params(TINY, 7)
    assert np.array_equal(a.flat(), b.flat())
    assert not np.array_equal(a.flat(), init_params(TINY, 8).flat())
    h = TINY.hidden_size
    assert np.all(a["rnn0.b"][:, h : 2 * h] == 1.0)
    assert np.all(a["rnn0.b"][:, :h] == 0.0) and np.all(a["rnn0.b"][:, 2 * h :] == 0.0)


def test_init_glorot_bounds():
    p = init_params(Architecture(input_channels=9), 7)
    limit = math.sqrt(6 / (9 + 4 * 56))
    assert np.abs(p["rnn0.W"]).max() <= limit
    assert np.abs(p["rnn0.W"]).max() > 0.9 * limit


def test_architecture_validation():
    with pytest.raises(ArchitectureError):
        Architecture(recurrent_layers=5)
    with pytest.raises(ArchitectureError):
        Architecture(cell="LSTM")
    with pytest.raises(ArchitectureError):
        Architecture(dropout=1.0)


# -- forward -------------------------------------------------------------------


def test_forward_shape_and_range():
    p = init_params(TINY, 1)
    x = np.random.default_rng(0).normal(size=(4, 7, 3))
    probs, _ = forward(p, x)
    assert probs.shape == (4, 1) and np.all((probs > 0) & (probs < 1))
    assert np.array_equal(forward(p, x)[0], probs)
    with pytest.raises(ShapeError):
        forward(p, np.zeros((4, 7, 2)))


def test_zero_terminal_layer_gives_half():
    p = init_params(TINY, 1)
    p.arrays["dense1.W"][:] = 0
    probs, _ = forward(p, np.random.default_rng(0).normal(size=(3, 5, 3)))
    assert np.all(probs == 0.5)


def test_dropout_expectation_monte_carlo():
    arch = Architecture(input_channels=3, recurrent_layers=1, hidden_size=4, dense_layers=1, dropout=0.5)
    p = init_params(arch, 3)
    x = np.random.default_rng(1).normal(size=(1, 6, 3))
    _, cache = forward(p, x)
    # align output weights with the features so the eval logit is well away from 0
    p.arrays["dense0.W"][:, 0] = np.sign(cache.dense_inputs[0][0])
    z_eval = math.log(forward(p, x)[0][0, 0] / (1 - forward(p, x)[0][0, 0]))
    probs, _ = forward(p, np.repeat(x, 10_000, axis=0), "train", np.random.default_rng(2))
    z_train = np.log(probs / (1 - probs)).mean()
    assert abs(z_eval) > 0.5
    assert abs(z_train - z_eval) <= 0.02 * abs(z_eval)


@pytest.mark.parametrize("cell", ["BiLSTM", "BiGRU"])
def test_time_reversal_swaps_directions(cell):
    arch = Architecture(cell=cell, input_channels=3, recurrent_layers=2, hidden_size=4, dense_layers=2, dense_width=5)
    p = init_params(arch, 5)
    q = init_params(arch, 5)
    h = arch.hidden_size
    for layer in range(arch.recurrent_layers):
        for kind in ("W", "U", "b"):
            q.arrays[f"rnn{layer}.{kind}"] = p[f"rnn{layer}.{kind}"][::-1].copy()
        if layer > 0:  # layer input is [forward, backward]; reversal swaps those halves
            q.arrays[f"rnn{layer}.W"] = _swap_halves(q[f"rnn{layer}.W"], h, axis=1)
    q.arrays["dense0.W"] = _swap_halves(p["dense0.W"], h, axis=0)
    x = np.random.default_rng(3).normal(size=(5, 8, 3))
    assert np.allclose(predict(p, x), predict(q, x[:, ::-1]), atol=1e-12)


# -- loss and gradients --------------------------------------------------------------


def test_loss_examples():
    assert weighted_ce_loss([0.5], [1]) == pytest.approx(math.log(2))
    assert weighted_ce_loss([0.5, 0.5], [0, 1], (0.6667, 2.0)) == pytest.approx((0.6667 + 2.0) * math.log(2) / 2)
    assert weighted_ce_loss([0.5, 0.5], [0, 1], (0.6667, 2.0)) == pytest.approx(0.9242, abs=1e-4)


def test_loss_clamps():
    assert math.isfinite(weighted_ce_loss([0.0, 1.0], [1, 0]))
    assert weighted_ce_loss([0.0], [1]) == pytest.approx(-math.log(1e-7))


def test_unit_weights_equal_unweighted():
    rng = np.random.default_rng(4)
    for _ in range(100):
        p = rng.uniform(0.01, 0.99, 32)
        y = rng.integers(0, 2, 32)
        plain = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
        assert abs(weighted_ce_loss(p, y, (1.0, 1.0)) - plain) <= 1e-12


@pytest.mark.parametrize("cell", ["BiLSTM", "BiGRU"])
def test_gradient_check_reference_tiny_net(cell):
    arch = Architecture(cell=cell, input_channels=2, recurrent_layers=1, hidden_size=3, dense_layers=2, dense_width=3, dropout=0.3)
    assert gradient_check(arch, seed=1, steps=5, batch=2) < 1e-4


def test_gradient_zero_at_constructed_optimum():
    # identical inputs labelled 0 and 1 with a zero output layer: p = 0.5 is optimal
    p = init_params(TINY, 2)
    p.arrays["dense1.W"][:] = 0
    x = np.repeat(np.random.default_rng(5).normal(size=(1, 5, 3)), 2, axis=0)
    probs, cache = forward(p, x)
    grads = backward(p, cache, [0, 1])
    assert max(np.abs(g).max() for g in grads.values()) < 1e-10


def test_gradient_linear_in_class_weights():
    p = init_params(TINY, 3)
    x = np.random.default_rng(6).normal(size=(4, 5, 3))
    y = np.array([0, 1, 1, 0])
    _, cache = forward(p, x)
    g12 = backward(p, cache, y, (1.0, 2.0))
    g10 = backward(p, cache, y, (1.0, 0.0))
    g01 = backward(p, cache, y, (0.0, 1.0))
    for name in g12:
        assert np.allclose(g12[name], g10[name] + 2 * g01[name], rtol=1e-12, atol=1e-15)


def test_stale_cache_rejected():
    p = init_params(TINY, 3)
    x = np.random.default_rng(6).normal(size=(2, 5, 3))
    _, cache = forward(p, x)
    optimizer_step(make_optimizer("SGD", 0.1), p, backward(p, cache, [0, 1]))
    with pytest.raises(StaleCacheError):
        backward(p, cache, [0, 1])


# -- optimizers --------------------------------------------------------------------


def _param(value):
    return types.SimpleNamespace(arrays={"w": np.array([value])}, version=0)


def test_sgd_step():
    p = _param(1.0)
    optimizer_step(make_optimizer("SGD", 0.1), p, {"w": np.array([0.5])})
    assert p.arrays["w"][0] == pytest.approx(0.95)
    optimizer_step(make_optimizer("SGD", 0.1), p, {"w": np.array([0.0])})
    assert p.arrays["w"][0] == pytest.approx(0.95)


def test_adam_first_step_is_sign_step():
    for g in (1e-3, 0.5, 40.0):
        p = _param(1.0)
        optimizer_step(make_optimizer("ADAM", 0.01), p, {"w": np.array([g])})
        assert 1.0 - p.arrays["w"][0] == pytest.approx(0.01, rel=1e-4)


def test_rmsprop_first_step():
    p = _param(0.0)
    optimizer_step(make_optimizer("RMSPROP", 0.001), p, {"w": np.array([2.0])})
    assert p.arrays["w"][0] == pytest.approx(-0.001 * 2.0 / (math.sqrt(0.1 * 4.0) + 1e-7))


def test_divergence():
    with pytest.raises(DivergenceError, match="diverged"):
        optimizer_step(make_optimizer("ADAM", 0.01), _param(1.0), {"w": np.array([np.nan])})
    with pytest.raises(ValueError):
        make_optimizer("ADAGRAD", 0.1)


# -- training ------------------------------------------------------------------------


def test_early_stopping_trace():
    stop = EarlyStopping(5)
    losses = [1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95]
    for epoch, loss in enumerate(losses, 1):
        _, halt = stop.update(epoch, loss)
        if halt:
            break
    assert epoch == 7 and stop.best_epoch == 2


def test_early_stopping_improvement_threshold():
    stop = EarlyStopping(2, 1e-6)
    stop.update(1, 1.0)
    assert stop.update(2, 1.0 - 5e-7) == (False, False)
    assert stop.update(3, 0.5) == (True, False)


def separable_task(n=64, steps=12, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=0.3, size=(n, steps, 5))
    y = (np.arange(n) % 2).astype(float)
    x[y == 1, :, 3] -= 1.0  # class 1: lowered channel 4
    return x, y


def test_training_separable_task():
    arch = Architecture(input_channels=5, recurrent_layers=1, hidden_size=6, dense_layers=1, dropout=0.3)
    cfg = TrainConfig(learning_rate=1e-2, batch_size=16, optimizer="ADAM", max_epochs=50)
    model = train(arch, cfg, separable_task(seed=0), separable_task(32, seed=1))
    first, last = model.curve[0]["train_loss"], model.curve[-1]["train_loss"]
    assert last <= 0.1 * first
    assert model.curve[model.best_epoch - 1]["val_loss"] == model.best_val_loss
    x_te, y_te = separable_task(32, seed=2)
    assert np.mean((model.predict(x_te) >= 0.5) == y_te) == 1.0


def test_training_deterministic_and_best_restored():
    arch = Architecture(input_channels=5, recurrent_layers=1, hidden_size=3, dense_layers=1, dropout=0.5)
    cfg = TrainConfig(learning_rate=1e-2, batch_size=8, max_epochs=4)
    a = train(arch, cfg, separable_task(16), separable_task(8, seed=1))
    b = train(arch, cfg, separable_task(16), separable_task(8, seed=1))
    assert np.array_equal(a.params.flat(), b.params.flat())
    x_va, y_va = separable_task(8, seed=1)
    assert weighted_ce_loss(a.predict(x_va), y_va, a.weights) == pytest.approx(a.best_val_loss, abs=1e-12)


# -- grid search ------------------------------------------------------------------------


def test_table2_grid_size():
    points = expand_grid(SEARCH_GRID, Architecture(input_channels=6), TrainConfig())
    assert len(points) == 4 * 4 * 3 * 4 * 3 * 3 == 1728
    assert points[0][2].learning_rate == 1e-4 and points[-1][1].dropout == 0.7


def test_select_best_rules():
    assert select_best([{"score": 0.5, "n_params": 1}, {"score": 0.4, "n_params": 9}]) == 1
    assert select_best([{"score": 0.4, "n_params": 9}, {"score": 0.4, "n_params": 3}]) == 1
    assert select_best([{"score": 0.4, "n_params": 3}, {"score": 0.4, "n_params": 3}]) == 0


def test_grid_search_with_stub_trainer():
    def fake_train(arch, cfg, tr, va):
        return types.SimpleNamespace(best_val_loss=abs(cfg.learning_rate - 1e-3) + arch.recurrent_layers * 0.0)

    grid = {"learning_rate": [1e-4, 1e-3, 1e-2], "recurrent_layers": [1, 2]}
    res = grid_search(grid, Architecture(input_channels=5), TrainConfig(), [(None, None)] * 3, train_fn=fake_train)
    assert len(res.rows) == 6
    assert res.config.learning_rate == 1e-3 and res.architecture.recurrent_layers == 1


# -- checkpoints -----------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    arch = Architecture(cell="BiGRU", input_channels=5, recurrent_layers=1, hidden_size=3, dense_layers=2, dense_width=4)
    model = train(arch, TrainConfig(learning_rate=1e-2, batch_size=8, max_epochs=2), separable_task(16), separable_task(8, seed=1))
    save_checkpoint(model, tmp_path / "m.json")
    back = load_checkpoint(tmp_path / "m.json")
    assert np.array_equal(back.params.flat(), model.params.flat())
    x = separable_task(8, seed=3)[0]
    assert np.array_equal(back.predict(x), model.predict(x))
    doc = checkpoint_document(model)
    assert sum(int(np.prod(s)) for _, s in doc["layout"]) == len(doc["weights"]) == count_params(arch)


def test_checkpoint_tamper_detected(tmp_path):
    import json

    arch = Architecture(input_channels=5, recurrent_layers=1, hidden_size=2, dense_layers=1)
    model = train(arch, TrainConfig(max_epochs=1, batch_size=8), separable_task(16), separable_task(8, seed=1))
    doc = checkpoint_document(model)
    doc["train_config"]["learning_rate"] = 0.5
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="config hash"):
        load_checkpoint(tmp_path / "bad.json")
    (tmp_path / "other.json").write_text("{}")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "other.json")
