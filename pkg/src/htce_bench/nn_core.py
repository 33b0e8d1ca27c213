"""Small float64 neural-network engine with hand-written gradients.

Layers keep explicit caches instead of a tape: ``forward`` returns the output
and a cache, ``backward`` consumes that cache.  A layer can therefore be run on
several batches (source and target) before any backward pass, and its
parameter gradients accumulate across calls until ``zero_grad``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717

ACTIVATIONS = ("relu", "selu", "sigmoid", "linear")


class NonFiniteError(FloatingPointError):
    """Raised as soon as a NaN or Inf shows up in a forward pass, loss or gradient."""


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def selu(x: np.ndarray) -> np.ndarray:
    return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def activate(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "linear":
        return pre
    if name == "relu":
        return relu(pre)
    if name == "selu":
        return selu(pre)
    if name == "sigmoid":
        return sigmoid(pre)
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, pre: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Elementwise derivative of the activation, evaluated at ``pre``."""
    if name == "linear":
        return np.ones_like(pre)
    if name == "relu":
        return (pre > 0).astype(np.float64)
    if name == "selu":
        return np.where(pre > 0, SELU_LAMBDA, out + SELU_LAMBDA * SELU_ALPHA)
    if name == "sigmoid":
        return out * (1.0 - out)
    raise ValueError(f"unknown activation {name!r}")


def init_weights(fan_in: int, fan_out: int, activation: str, rng: np.random.Generator) -> np.ndarray:
    """He-uniform for relu, LeCun-normal for selu, Glorot-uniform otherwise."""
    if activation == "selu":
        # He scaling doubles the variance per selu layer; deep stacks then stall
        return rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, fan_out))
    if activation == "relu":
        limit = np.sqrt(6.0 / fan_in)
    else:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class DenseCache:
    x: np.ndarray
    pre: np.ndarray
    out: np.ndarray


@dataclass
class DenseLayer:
    """``activation(x @ weights + bias)`` with accumulated parameter gradients."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "linear"
    frozen: bool = False
    grad_w: np.ndarray = field(init=False, repr=False)
    grad_b: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2 or self.weights.shape[1] != self.bias.shape[0]:
            raise ValueError(
                f"weights {self.weights.shape} and bias {self.bias.shape} are inconsistent"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.grad_w = np.zeros_like(self.weights)
        self.grad_b = np.zeros_like(self.bias)

    @classmethod
    def create(
        cls, in_dim: int, out_dim: int, activation: str, rng: np.random.Generator
    ) -> "DenseLayer":
        return cls(init_weights(in_dim, out_dim, activation, rng), np.zeros(out_dim), activation)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, DenseCache]:
        return dense_forward(self, x)

    def backward(self, cache: DenseCache, upstream: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients and return the input gradient."""
        dx, dw, db = dense_backward(self, upstream, cache)
        if not self.frozen:
            self.grad_w += dw
            self.grad_b += db
        return dx

    def zero_grad(self) -> None:
        self.grad_w.fill(0.0)
        self.grad_b.fill(0.0)

    def freeze_at_zero(self) -> None:
        self.weights.fill(0.0)
        self.bias.fill(0.0)
        self.frozen = True
        self.zero_grad()


def dense_forward(layer: DenseLayer, x: np.ndarray) -> tuple[np.ndarray, DenseCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ValueError(f"input of shape {x.shape} does not match in_dim={layer.in_dim}")
    pre = x @ layer.weights + layer.bias
    out = activate(layer.activation, pre)
    check_finite(out, "dense layer output")
    return out, DenseCache(x, pre, out)


def dense_backward(
    layer: DenseLayer, upstream: np.ndarray, cache: DenseCache | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of ``dense_forward`` w.r.t. input, weights and bias."""
    if cache is None:
        raise RuntimeError("backward called without a cached forward pass")
    if upstream.shape != cache.out.shape:
        raise ValueError(f"upstream grad {upstream.shape} != output {cache.out.shape}")
    dpre = upstream * activation_grad(layer.activation, cache.pre, cache.out)
    dw = cache.x.T @ dpre
    db = dpre.sum(axis=0)
    dx = dpre @ layer.weights.T
    return dx, dw, db


class MLP:
    """Plain stack of dense layers."""

    def __init__(self, layers: list[DenseLayer]):
        self.layers = layers

    @classmethod
    def create(
        cls,
        in_dim: int,
        hidden: Iterable[int],
        activation: str,
        rng: np.random.Generator,
        out_dim: int | None = None,
        out_activation: str = "linear",
    ) -> "MLP":
        layers = []
        width = in_dim
        for units in hidden:
            layers.append(DenseLayer.create(width, units, activation, rng))
            width = units
        if out_dim is not None:
            layers.append(DenseLayer.create(width, out_dim, out_activation, rng))
        return cls(layers)

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[DenseCache]]:
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches: list[DenseCache], upstream: np.ndarray) -> np.ndarray:
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            upstream = layer.backward(cache, upstream)
        return upstream

    def named_layers(self, prefix: str) -> dict[str, DenseLayer]:
        return {f"{prefix}.{i}": layer for i, layer in enumerate(self.layers)}


# ---------------------------------------------------------------- losses


def loss_mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    if pred.size == 0:
        raise ValueError("empty prediction")
    diff = pred - target
    loss = float(np.mean(diff**2))
    return loss, 2.0 * diff / pred.size


def loss_bce(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Binary cross-entropy on probabilities in (0, 1), mean-reduced."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    if pred.size == 0:
        raise ValueError("empty prediction")
    if np.any(pred <= 0.0) or np.any(pred >= 1.0):
        raise ValueError("bce predictions must lie strictly inside (0, 1)")
    if np.any((target != 0.0) & (target != 1.0)):
        raise ValueError("bce targets must be 0 or 1")
    loss = float(-np.mean(target * np.log(pred) + (1.0 - target) * np.log1p(-pred)))
    grad = (pred - target) / (pred * (1.0 - pred)) / pred.size
    return loss, grad


def bce_with_logits(logits: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """BCE of ``sigmoid(logits)``; gradient w.r.t. the logits.

    Numerically equal to ``loss_bce(sigmoid(logits), target)`` but never hits
    log(0) when the sigmoid saturates.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).reshape(logits.shape)
    if logits.size == 0:
        raise ValueError("empty prediction")
    loss = float(np.mean(np.logaddexp(0.0, logits) - target * logits))
    return loss, (sigmoid(logits) - target) / logits.size


def frobenius_orth(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Frobenius norm of ``a.T @ b``."""
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"row mismatch: {a.shape} vs {b.shape}")
    return float(np.sum((a.T @ b) ** 2))


def frobenius_orth_grad(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"row mismatch: {a.shape} vs {b.shape}")
    atb = a.T @ b
    return 2.0 * b @ atb.T, 2.0 * a @ atb


# ---------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState
) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if params.keys() != grads.keys():
        raise ValueError("params and grads have different keys")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        check_finite(g, f"gradient of {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------- parameter bookkeeping


class LayerCollection:
    """Mixin for models that own a flat ``name -> DenseLayer`` registry."""

    def named_layers(self) -> dict[str, DenseLayer]:
        raise NotImplementedError

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.named_layers().items():
            if not layer.frozen:
                out[f"{name}.W"] = layer.weights
                out[f"{name}.b"] = layer.bias
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.named_layers().items():
            if not layer.frozen:
                out[f"{name}.W"] = layer.grad_w
                out[f"{name}.b"] = layer.grad_b
        return out

    def zero_grad(self) -> None:
        for layer in self.named_layers().values():
            layer.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        snap = {}
        for name, layer in self.named_layers().items():
            snap[f"{name}.W"] = layer.weights.copy()
            snap[f"{name}.b"] = layer.bias.copy()
        return snap

    def restore(self, snap: Mapping[str, np.ndarray]) -> None:
        for name, layer in self.named_layers().items():
            layer.weights[...] = snap[f"{name}.W"]
            layer.bias[...] = snap[f"{name}.b"]
