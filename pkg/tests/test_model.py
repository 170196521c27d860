import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from util import random_instance

from fusiondetect.graphstream import build_adjacency, build_stream
from fusiondetect.model import (PARAM_ORDER, GraphError, ModelState, TrainConfig, forward, forward_batch,
                                gat_forward, gru_forward, gt_compose, gt_soft_select, gtn_forward,
                                init_params, load_checkpoint, loss, loss_and_grads, permute_channels,
                                predict_last, save_checkpoint, train)


def fd_check(params, A, mod, windows, step=1e-5):
    """Worst relative error between analytic and central-difference gradients, per tensor."""
    _, grads, _ = loss_and_grads(params, A, mod, windows)
    target = windows[:, -1]

    def value():
        return np.mean((forward_batch(params, A, mod, windows).prediction - target) ** 2)

    worst = {}
    for k in PARAM_ORDER:
        arr = params[k]
        w = 0.0
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + step
            up = value()
            arr[idx] = old - step
            down = value()
            arr[idx] = old
            fd = (up - down) / (2 * step)
            a = grads[k][idx]
            w = max(w, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
        worst[k] = w
    return worst


# ------------------------------------------------------------------ GT layers

def test_soft_select_one_hot_and_zero():
    _, A, *_ = random_instance(0)
    for k in range(6):
        w = np.eye(6)[k]
        np.testing.assert_array_equal(gt_soft_select(A, w), A[k])
    assert not gt_soft_select(A, np.zeros(6)).any()


def test_soft_select_average_of_two_slices():
    rng = np.random.default_rng(1)
    A = rng.random((2, 3, 3))
    np.testing.assert_allclose(gt_soft_select(A, [0.5, 0.5]), (A[0] + A[1]) / 2, atol=1e-15)
    np.testing.assert_allclose(gt_soft_select(A, [0.5, 0.5]), oracles.soft_select(A, [0.5, 0.5]), atol=1e-10)


def test_compose_identity_and_hand_matrices():
    Q = np.array([[0.2, 0.8, 0.0], [0.5, 0.25, 0.25], [0.0, 0.0, 1.0]])
    np.testing.assert_allclose(gt_compose(np.eye(3), Q), Q, atol=1e-15)
    prev = np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 3.0], [2.0, 0.0, 1.0]])
    Q2 = np.array([[1.0, 0.0, 1.0], [2.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
    # prev @ Q2 by hand: [[5,2,1],[2,4,3],[2,1,3]]; row sums 8, 9, 6
    expected = np.array([[5, 2, 1], [2, 4, 3], [2, 1, 3]]) / np.array([[8.0], [9.0], [6.0]])
    out = gt_compose(prev, Q2)
    np.testing.assert_allclose(out, expected, atol=1e-15)
    np.testing.assert_allclose(out.sum(1), 1.0)


def test_compose_zero_row_raises():
    with pytest.raises(GraphError):
        gt_compose(np.eye(2), np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_gtn_two_hop_meta_path():
    _, A, *_ = random_instance(2)
    k = 0
    w = np.tile(np.eye(6)[k], (2, 1))
    M, _ = gtn_forward(A, w)
    P = A[k] @ A[k]
    np.testing.assert_allclose(M, P / P.sum(1, keepdims=True), atol=1e-12)
    M1, _ = gtn_forward(A, w[:1])
    np.testing.assert_allclose(M1, A[k] / A[k].sum(1, keepdims=True), atol=1e-12)


# ------------------------------------------------------------------ GAT

def test_gat_single_node():
    rng = np.random.default_rng(3)
    W, a, WH = rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 6)), rng.normal(size=(6, 2))
    f = rng.normal(size=(1, 4))
    out, cache = gat_forward(f, np.ones((1, 1)), W, a, WH)
    alpha = cache[4]
    np.testing.assert_array_equal(alpha, np.ones((2, 1, 1)))
    np.testing.assert_allclose(out[0], np.concatenate([f[0] @ W[0], f[0] @ W[1]]) @ WH, atol=1e-12)


def test_gat_two_nodes_by_hand():
    # H=1, F=F'=1, W=1, a=(1, 2), W_H=1, A' all 0.5
    f = np.array([[1.0], [-2.0]])
    W, a, WH = np.ones((1, 1, 1)), np.array([[1.0, 2.0]]), np.ones((1, 1))
    Ap = np.full((2, 2), 0.5)
    out, _ = gat_forward(f, Ap, W, a, WH)
    # e_ij = z_i + 2 z_j with z = (1, -2); u = e/2
    u = np.array([[1 + 2, 1 - 4], [-2 + 2, -2 - 4]]) * 0.5
    beta = np.where(u > 0, u, 0.2 * u)
    alpha = np.exp(beta) / np.exp(beta).sum(1, keepdims=True)
    np.testing.assert_allclose(out[:, 0], alpha @ np.array([1.0, -2.0]), atol=1e-14)


def test_attention_rows_sum_to_one():
    _, A, params, mod, windows = random_instance(4)
    fw = forward_batch(params, A, mod, windows)
    np.testing.assert_allclose(fw.attention.sum(-1), 1.0, atol=1e-6)


# ------------------------------------------------------------------ GRU, head, loss

def test_gru_zero_parameters_stay_at_zero():
    p = {k: np.zeros_like(v) for k, v in init_params(TrainConfig(hidden=5), 3).items()}
    hs, _ = gru_forward(np.random.default_rng(0).normal(size=(2, 7, 3)), p)
    assert not hs.any()


def test_gru_scalar_two_steps_by_hand():
    p = {f"gru_{m}{g}": np.array([[v]]) for (m, g), v in zip(
        [("W", "z"), ("U", "z"), ("W", "r"), ("U", "r"), ("W", "h"), ("U", "h")], [0.5, -0.3, 0.2, 0.4, 1.1, 0.7])}
    for g, b in (("z", 0.1), ("r", -0.2), ("h", 0.05)):
        p[f"gru_b{g}"] = np.array([b])
    x = np.array([[[0.8], [-0.4]]])
    s = lambda v: 1 / (1 + np.exp(-v))
    h = 0.0
    for xt in (0.8, -0.4):
        z = s(0.5 * xt - 0.3 * h + 0.1)
        r = s(0.2 * xt + 0.4 * h - 0.2)
        c = np.tanh(1.1 * xt + 0.7 * (h * r) + 0.05)
        h = (1 - z) * h + z * c
    hs, _ = gru_forward(x, p)
    assert abs(hs[0, -1, 0] - h) < 1e-14


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_gru_hidden_in_open_unit_interval(seed):
    rng = np.random.default_rng(seed)
    p = init_params(TrainConfig(hidden=4, seed=seed), 2)
    hs, _ = gru_forward(rng.normal(scale=2, size=(1, 10, 2)), p)
    assert np.all(np.abs(hs) < 1)


def test_predict_last_cases():
    assert not predict_last(np.ones(3), np.zeros((2, 3)), np.zeros(2)).any()
    W, b, h = np.array([[0.5, -1.0], [2.0, 0.25]]), np.array([0.1, -0.3]), np.array([0.4, 0.2])
    expected = np.tanh(np.array([0.5 * 0.4 - 1.0 * 0.2 + 0.1, 2.0 * 0.4 + 0.25 * 0.2 - 0.3]))
    np.testing.assert_allclose(predict_last(h, W, b), expected, atol=1e-15)
    big = predict_last(np.full(2, 100.0), W, b)
    assert np.all(np.abs(big) <= 1)


def test_loss_cases():
    assert loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert loss([1.0, 0.0], [0.0, 0.0]) == 0.5
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=5), rng.normal(size=5)
    assert abs(loss(a, b) - oracles.mse(a, b)) < 1e-12


# ------------------------------------------------------------------ layer oracles

@pytest.mark.parametrize("seed", range(3))
def test_layers_match_straight_line_oracles(seed):
    _, A, params, mod, windows = random_instance(seed, n=4, theta=5, layers=2, heads=2, hidden=5, batch=1)
    w = params["gt_w"]
    np.testing.assert_allclose(gt_soft_select(A, w[0]), oracles.soft_select(A, w[0]), atol=1e-10)
    Q = gt_soft_select(A, w[1])
    np.testing.assert_allclose(gt_compose(A[0], Q), oracles.compose(A[0], Q), atol=1e-10)
    M, _ = gtn_forward(A, w)
    np.testing.assert_allclose(M, oracles.gtn(A, w), atol=1e-10)
    f = windows[0, 0][:, None] * params["lift_w"][mod] + params["lift_b"][mod]
    out, cache = gat_forward(f, M, params["gat_W"], params["gat_a"], params["gat_WH"])
    ref, att = oracles.gat(f, M, params["gat_W"], params["gat_a"], params["gat_WH"])
    np.testing.assert_allclose(out, ref, atol=1e-10)
    np.testing.assert_allclose(cache[4], att, atol=1e-10)
    xs = np.random.default_rng(seed).normal(size=(1, 4, 4))
    hs, _ = gru_forward(xs, params)
    np.testing.assert_allclose(hs[0], oracles.gru(xs[0], params), atol=1e-10)
    np.testing.assert_allclose(predict_last(hs[0, -1], params["out_W"], params["out_b"]),
                               oracles.predict(hs[0, -1], params["out_W"], params["out_b"]), atol=1e-10)


def test_forward_matches_end_to_end_oracle():
    _, A, params, mod, windows = random_instance(6, n=4, theta=5, layers=2, heads=2, hidden=5, batch=1)
    fw = forward_batch(params, A, mod, windows)
    np.testing.assert_allclose(fw.prediction[0], oracles.forward(A, params, mod, windows[0]), atol=1e-10)


# ------------------------------------------------------------------ gradients

def test_finite_difference_gradients():
    _, A, params, mod, windows = random_instance(11)
    worst = fd_check(params, A, mod, windows)
    assert max(worst.values()) < 1e-4, worst


def test_zero_loss_gives_zero_gradients():
    _, A, params, mod, windows = random_instance(7)
    windows[:, -1] = forward_batch(params, A, mod, windows).prediction
    value, grads, _ = loss_and_grads(params, A, mod, windows)
    assert value == 0.0
    assert all(not g.any() for g in grads.values())


def test_output_bias_gradient_by_hand():
    _, A, params, mod, windows = random_instance(8, batch=1)
    _, grads, pred = loss_and_grads(params, A, mod, windows)
    N = pred.shape[1]
    expected = (2.0 / N) * (pred[0] - windows[0, -1]) * (1 - pred[0] ** 2)
    np.testing.assert_allclose(grads["out_b"], expected, atol=1e-15)


# ------------------------------------------------------------------ invariants

@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
@settings(max_examples=20, deadline=None)
def test_gtn_row_stochastic(seed, layers):
    _, A, params, *_ = random_instance(seed, layers=layers)
    M, _ = gtn_forward(A, params["gt_w"])
    np.testing.assert_allclose(M.sum(1), 1.0, atol=1e-12)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_channel_permutation_equivariance(seed):
    _, A, params, mod, windows = random_instance(seed)
    perm = np.random.default_rng(seed).permutation(6)
    base = forward_batch(params, A, mod, windows).prediction
    moved = forward_batch(permute_channels(params, perm), A[:, perm][:, :, perm], mod[perm],
                          windows[:, :, perm]).prediction
    np.testing.assert_allclose(moved, base[:, perm], atol=1e-12)


# ------------------------------------------------------------------ training and checkpoints

def toy_series(seed=0, n=4, tau=300):
    rng = np.random.default_rng(seed)
    t = np.arange(tau)
    X = np.vstack([np.sin(2 * np.pi * t / 50 + k) + 0.05 * rng.normal(size=tau) for k in range(n)])
    mods = ("Metric", "Metric", "Log", "Trace")[:n]
    return X, build_adjacency(X, mods).slices, [0, 0, 1, 2][:n]


def test_zero_epochs_keeps_initialization():
    X, A, mods = toy_series()
    cfg = TrainConfig(epochs=0, layers=2, heads=2, hidden=8, seed=3)
    state = train(X, A, mods, np.arange(9, 200), cfg, theta=10)
    ref = init_params(cfg, 4)
    for k in PARAM_ORDER:
        np.testing.assert_array_equal(state.params[k], ref[k])
    assert state.loss_history == []


def test_training_is_deterministic_and_reduces_loss():
    X, A, mods = toy_series()
    cfg = TrainConfig(epochs=8, layers=2, heads=2, hidden=8, learning_rate=1e-2, seed=1)
    a = train(X, A, mods, np.arange(9, 200), cfg, theta=10)
    b = train(X, A, mods, np.arange(9, 200), cfg, theta=10)
    assert a.loss_history == b.loss_history
    for k in PARAM_ORDER:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert a.loss_history[-1] < a.loss_history[0]
    assert np.all(a.params["gt_w"] >= 0)


def test_forward_is_pure_and_shaped():
    X, A, mods = toy_series()
    cfg = TrainConfig(epochs=1, layers=2, heads=2, hidden=8)
    state = train(X, A, mods, np.arange(9, 100), cfg, theta=10)
    from fusiondetect.graphstream import AdjacencyTensor
    from fusiondetect.serialize import Modality
    adj = AdjacencyTensor(A, (Modality.METRIC,) * 2 + (Modality.LOG, Modality.TRACE))
    stream = build_stream(X, adj, 150, 10)
    one, two = forward(stream, state), forward(stream, state)
    assert one.prediction.shape == (1, 4)
    np.testing.assert_array_equal(one.prediction, two.prediction)


def test_predict_rejects_wrong_shape():
    X, A, mods = toy_series()
    state = ModelState.initial(TrainConfig(layers=2, heads=2, hidden=8), mods, 10)
    with pytest.raises(ValueError):
        state.predict(A, np.zeros((1, 9, 4)))


def test_checkpoint_round_trip(tmp_path):
    X, A, mods = toy_series()
    state = train(X, A, mods, np.arange(9, 100), TrainConfig(epochs=2, layers=2, heads=2, hidden=8), theta=10)
    path = tmp_path / "model.ckpt"
    save_checkpoint(state, path, {"tag": "x"})
    back, extra = load_checkpoint(path)
    assert extra == {"tag": "x"}
    assert back.config == state.config and back.step == state.step
    assert back.loss_history == state.loss_history
    for group in ("params", "adam_m", "adam_v"):
        for k in PARAM_ORDER:
            np.testing.assert_array_equal(getattr(back, group)[k], getattr(state, group)[k])
    np.testing.assert_array_equal(back.center, state.center)
    np.testing.assert_array_equal(back.scale, state.scale)


def test_checkpoint_rejects_newer_version(tmp_path):
    import struct
    X, A, mods = toy_series()
    state = ModelState.initial(TrainConfig(layers=1, heads=1, hidden=2), mods, 10)
    path = tmp_path / "m.ckpt"
    save_checkpoint(state, path)
    data = bytearray(path.read_bytes())
    data[8:12] = struct.pack("<I", 99)
    path.write_bytes(bytes(data))
    with pytest.raises(ValueError, match="newer"):
        load_checkpoint(path)
