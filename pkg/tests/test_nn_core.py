import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradcheck import max_relative_error, numerical_grad
from htce_bench.nn_core import (
    MLP,
    SELU_ALPHA,
    SELU_LAMBDA,
    AdamState,
    DenseLayer,
    NonFiniteError,
    adam_step,
    bce_with_logits,
    dense_backward,
    dense_forward,
    frobenius_orth,
    frobenius_orth_grad,
    init_weights,
    loss_bce,
    loss_mse,
    relu,
    selu,
    sigmoid,
)

finite = st.floats(-5, 5, allow_nan=False)


# ---- dense layer


def test_dense_identity_linear():
    layer = DenseLayer(np.eye(2), np.zeros(2), "linear")
    out, _ = dense_forward(layer, np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(out, [[1.0, 2.0]])


def test_dense_relu_clamps_negative():
    layer = DenseLayer(np.array([[1.0], [1.0]]), np.zeros(1), "relu")
    out, _ = dense_forward(layer, np.array([[-1.0, -2.0]]))
    np.testing.assert_array_equal(out, [[0.0]])


def test_dense_sigmoid_value():
    layer = DenseLayer(np.array([[0.5], [0.5]]), np.array([1.0]), "sigmoid")
    out, _ = dense_forward(layer, np.array([[1.0, 1.0]]))
    assert out[0, 0] == pytest.approx(1 / (1 + math.exp(-2)))
    assert out[0, 0] == pytest.approx(0.8808, abs=1e-4)


def test_dense_dimension_mismatch():
    layer = DenseLayer(np.eye(2), np.zeros(2))
    with pytest.raises(ValueError):
        dense_forward(layer, np.ones((1, 3)))


def test_dense_inconsistent_bias():
    with pytest.raises(ValueError):
        DenseLayer(np.eye(2), np.zeros(3))


def test_dense_unknown_activation():
    with pytest.raises(ValueError):
        DenseLayer(np.eye(2), np.zeros(2), "tanh")


@pytest.mark.filterwarnings("ignore:overflow")
def test_dense_non_finite_output_raises():
    layer = DenseLayer(np.array([[1e308]]), np.zeros(1))
    with pytest.raises(NonFiniteError):
        dense_forward(layer, np.array([[10.0]]))


def test_backward_linear_zero_input():
    layer = DenseLayer(np.ones((3, 2)), np.zeros(2))
    x = np.zeros((4, 3))
    _, cache = dense_forward(layer, x)
    dx, dw, db = dense_backward(layer, np.ones((4, 2)), cache)
    np.testing.assert_array_equal(dw, 0.0)
    np.testing.assert_array_equal(db, [4.0, 4.0])
    np.testing.assert_array_equal(dx, 2.0)


def test_backward_without_forward():
    layer = DenseLayer(np.eye(2), np.zeros(2))
    with pytest.raises(RuntimeError):
        dense_backward(layer, np.ones((1, 2)), None)


def test_backward_shape_mismatch():
    layer = DenseLayer(np.eye(2), np.zeros(2))
    _, cache = dense_forward(layer, np.ones((3, 2)))
    with pytest.raises(ValueError):
        dense_backward(layer, np.ones((2, 2)), cache)


def test_relu_negative_preactivation_blocks_gradient():
    layer = DenseLayer(np.array([[1.0]]), np.zeros(1), "relu")
    _, cache = dense_forward(layer, np.array([[-3.0], [2.0]]))
    dx, _, _ = dense_backward(layer, np.ones((2, 1)), cache)
    assert dx[0, 0] == 0.0
    assert dx[1, 0] == 1.0


@pytest.mark.parametrize("activation", ["relu", "selu", "sigmoid", "linear"])
@pytest.mark.parametrize("seed", range(5))
def test_dense_gradients_match_finite_differences(activation, seed):
    rng = np.random.default_rng(seed)
    layer = DenseLayer(rng.normal(size=(4, 3)), rng.normal(size=3), activation)
    x = rng.normal(size=(6, 4))
    up = rng.normal(size=(6, 3))

    def f():
        return float(np.sum(dense_forward(layer, x)[0] * up))

    _, cache = dense_forward(layer, x)
    dx, dw, db = dense_backward(layer, up, cache)
    assert max_relative_error(dw, numerical_grad(f, layer.weights)) < 1e-4
    assert max_relative_error(db, numerical_grad(f, layer.bias)) < 1e-4
    assert max_relative_error(dx, numerical_grad(f, x)) < 1e-4


def test_layer_backward_accumulates_and_frozen_layers_do_not():
    layer = DenseLayer(np.eye(2), np.zeros(2))
    _, cache = layer.forward(np.ones((1, 2)))
    layer.backward(cache, np.ones((1, 2)))
    layer.backward(cache, np.ones((1, 2)))
    np.testing.assert_array_equal(layer.grad_b, [2.0, 2.0])
    layer.freeze_at_zero()
    _, cache = layer.forward(np.ones((1, 2)))
    layer.backward(cache, np.ones((1, 2)))
    np.testing.assert_array_equal(layer.grad_w, 0.0)
    np.testing.assert_array_equal(layer.weights, 0.0)


def test_mlp_gradients():
    rng = np.random.default_rng(0)
    mlp = MLP.create(3, [5, 4], "selu", rng, out_dim=1)
    x = rng.normal(size=(7, 3))

    def f():
        return float(np.sum(mlp.forward(x)[0] ** 2))

    out, caches = mlp.forward(x)
    for layer in mlp.layers:
        layer.zero_grad()
    mlp.backward(caches, 2 * out)
    for layer in mlp.layers:
        assert max_relative_error(layer.grad_w, numerical_grad(f, layer.weights)) < 1e-4
        assert max_relative_error(layer.grad_b, numerical_grad(f, layer.bias)) < 1e-4


# ---- activations


def test_selu_closed_form():
    xs = np.linspace(-4, 4, 81)
    expected = np.where(xs > 0, SELU_LAMBDA * xs, SELU_LAMBDA * SELU_ALPHA * (np.exp(xs) - 1))
    np.testing.assert_allclose(selu(xs), expected, rtol=1e-15, atol=1e-15)
    assert SELU_LAMBDA == pytest.approx(1.0507, abs=1e-4)
    assert SELU_ALPHA == pytest.approx(1.6733, abs=1e-4)


def test_relu_closed_form():
    xs = np.linspace(-4, 4, 81)
    np.testing.assert_array_equal(relu(xs), np.maximum(xs, 0.0))


@given(arrays(np.float64, 20, elements=st.floats(-800, 800)))
def test_sigmoid_stable_and_in_range(x):
    s = sigmoid(x)
    assert np.all(np.isfinite(s))
    assert np.all((s >= 0) & (s <= 1))
    np.testing.assert_allclose(s + sigmoid(-x), 1.0, atol=1e-12)


# ---- initialisation


def test_init_weights_scales():
    rng = np.random.default_rng(0)
    w = init_weights(400, 400, "relu", rng)
    assert np.abs(w).max() <= math.sqrt(6 / 400)
    w = init_weights(400, 400, "selu", rng)
    assert w.std() == pytest.approx(math.sqrt(1 / 400), rel=0.02)
    w = init_weights(400, 100, "linear", rng)
    assert np.abs(w).max() <= math.sqrt(6 / 500)


# ---- frobenius penalty


def test_frobenius_orthogonal_columns():
    assert frobenius_orth(np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]])) == 0.0


def test_frobenius_identity_vs_ones():
    assert frobenius_orth(np.eye(2), np.ones((2, 2))) == pytest.approx(4.0)


def test_frobenius_zero_b():
    assert frobenius_orth(np.ones((3, 2)), np.zeros((3, 4))) == 0.0


def test_frobenius_row_mismatch():
    with pytest.raises(ValueError):
        frobenius_orth(np.ones((3, 2)), np.ones((2, 2)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 3), elements=finite), arrays(np.float64, (4, 2), elements=finite))
def test_frobenius_nonnegative_and_zero_iff_orthogonal(a, b):
    v = frobenius_orth(a, b)
    assert v >= 0
    assert (v == 0) == np.all(a.T @ b == 0)


@pytest.mark.parametrize("seed", range(5))
def test_frobenius_gradients(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    ga, gb = frobenius_orth_grad(a, b)
    np.testing.assert_allclose(ga, 2 * b @ (b.T @ a))
    np.testing.assert_allclose(gb, 2 * a @ (a.T @ b))
    assert max_relative_error(ga, numerical_grad(lambda: frobenius_orth(a, b), a)) < 1e-4
    assert max_relative_error(gb, numerical_grad(lambda: frobenius_orth(a, b), b)) < 1e-4


# ---- losses


def test_mse_values():
    assert loss_mse(np.array([1.0, 2.0]), np.array([1.0, 2.0]))[0] == 0.0
    assert loss_mse(np.array([0.0]), np.array([2.0]))[0] == pytest.approx(4.0)


def test_mse_length_mismatch():
    with pytest.raises(ValueError):
        loss_mse(np.zeros(2), np.zeros(3))


def test_bce_value():
    assert loss_bce(np.array([0.5]), np.array([1.0]))[0] == pytest.approx(math.log(2))
    assert loss_bce(np.array([0.5]), np.array([1.0]))[0] == pytest.approx(0.6931, abs=1e-4)


@pytest.mark.parametrize("pred", [0.0, 1.0, -0.1, 1.5])
def test_bce_rejects_out_of_range(pred):
    with pytest.raises(ValueError):
        loss_bce(np.array([pred]), np.array([1.0]))


def test_bce_rejects_non_binary_target():
    with pytest.raises(ValueError):
        loss_bce(np.array([0.3]), np.array([0.5]))


@pytest.mark.parametrize("seed", range(3))
def test_loss_gradients(seed):
    rng = np.random.default_rng(seed)
    pred = rng.uniform(0.05, 0.95, size=8)
    target = rng.integers(0, 2, size=8).astype(float)
    _, g = loss_mse(pred, target)
    assert max_relative_error(g, numerical_grad(lambda: loss_mse(pred, target)[0], pred)) < 1e-4
    _, g = loss_bce(pred, target)
    assert max_relative_error(g, numerical_grad(lambda: loss_bce(pred, target)[0], pred)) < 1e-4
    logits = rng.normal(size=8)
    value, g = bce_with_logits(logits, target)
    assert value == pytest.approx(loss_bce(sigmoid(logits), target)[0])
    assert max_relative_error(g, numerical_grad(lambda: bce_with_logits(logits, target)[0], logits)) < 1e-4


# ---- adam


def test_adam_first_step_hand_value():
    p = {"x": np.array([0.0])}
    state = AdamState(learning_rate=1e-4)
    adam_step(p, {"x": np.array([1.0])}, state)
    # m_hat = v_hat = 1 after bias correction, so the step is -lr / (1 + eps)
    assert p["x"][0] == pytest.approx(-1e-4 / (1 + 1e-8), rel=1e-12)
    assert p["x"][0] == pytest.approx(-1e-4, rel=1e-6)
    assert state.step == 1


def test_adam_zero_gradient_keeps_params_and_decays_moments():
    fresh = {"x": np.array([3.0, -1.0])}
    state = AdamState()
    adam_step(fresh, {"x": np.zeros(2)}, state)
    np.testing.assert_array_equal(fresh["x"], [3.0, -1.0])
    np.testing.assert_array_equal(state.m["x"], 0.0)

    p = {"x": np.array([1.0, -2.0])}
    state = AdamState()
    adam_step(p, {"x": np.array([1.0, 1.0])}, state)
    m_before = state.m["x"].copy()
    v_before = state.v["x"].copy()
    adam_step(p, {"x": np.zeros(2)}, state)
    np.testing.assert_allclose(state.m["x"], 0.9 * m_before)
    np.testing.assert_allclose(state.v["x"], 0.999 * v_before)


def test_adam_step_counter_increases():
    p = {"x": np.zeros(1)}
    state = AdamState()
    for i in range(1, 4):
        adam_step(p, {"x": np.ones(1)}, state)
        assert state.step == i


def test_adam_errors():
    with pytest.raises(ValueError):
        adam_step({"x": np.zeros(2)}, {"x": np.zeros(3)}, AdamState())
    with pytest.raises(ValueError):
        adam_step({"x": np.zeros(2)}, {"y": np.zeros(2)}, AdamState())
    with pytest.raises(NonFiniteError):
        adam_step({"x": np.zeros(1)}, {"x": np.array([np.nan])}, AdamState())


def _train_tiny(seed):
    rng = np.random.default_rng(seed)
    mlp = MLP.create(3, [8], "relu", rng, out_dim=1)
    x = rng.normal(size=(32, 3))
    y = x.sum(axis=1)
    state = AdamState(learning_rate=1e-2)
    for _ in range(20):
        out, caches = mlp.forward(x)
        _, g = loss_mse(out[:, 0], y)
        for layer in mlp.layers:
            layer.zero_grad()
        mlp.backward(caches, g.reshape(-1, 1))
        params = {f"{i}.{k}": v for i, l in enumerate(mlp.layers) for k, v in (("W", l.weights), ("b", l.bias))}
        grads = {f"{i}.{k}": v for i, l in enumerate(mlp.layers) for k, v in (("W", l.grad_w), ("b", l.grad_b))}
        adam_step(params, grads, state)
    return [l.weights.copy() for l in mlp.layers]


def test_training_is_bitwise_deterministic():
    a, b = _train_tiny(3), _train_tiny(3)
    for wa, wb in zip(a, b):
        assert np.array_equal(wa, wb)
    c = _train_tiny(4)
    assert not np.array_equal(a[0], c[0])
