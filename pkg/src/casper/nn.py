"""Small dense networks with hand-written reverse-mode gradients.

Hosts the per-node fitting model (one MLP per variable, or a single weight
matrix in linear mode), the scalar critic, weight clipping and Adam.
Weights are stored ``(fan_in, fan_out)`` so a layer computes ``X @ W + b``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = "CASPER-DENSENET"
CHECKPOINT_VERSION = 1


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# activation, derivative expressed through the activation's output
ACTIVATIONS = {
    "sigmoid": (_sigmoid, lambda a: a * (1.0 - a)),
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda a: (a > 0).astype(float)),
}
ACTIVATION_SLOPE = {"sigmoid": 0.25, "tanh": 1.0, "relu": 1.0}


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class DenseNet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {k}: weight {W.shape} incompatible with bias {b.shape}")
            if k and W.shape[0] != self.weights[k - 1].shape[1]:
                raise ValueError(f"layer {k} input width does not match layer {k - 1} output")

    @classmethod
    def create(cls, sizes: list[int], activation: str = "tanh", seed=None) -> "DenseNet":
        rng = np.random.default_rng(seed)
        weights = [glorot_uniform(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(b) for b in sizes[1:]]
        return cls(weights, biases, activation)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def set_params(self, params: list[np.ndarray]) -> None:
        self.weights = [np.array(p, dtype=float) for p in params[0::2]]
        self.biases = [np.array(p, dtype=float) for p in params[1::2]]

    def copy(self) -> "DenseNet":
        return DenseNet([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.activation)


def _check_batch(net: DenseNet, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise ValueError(f"batch of shape {batch.shape} does not fit input width {net.input_dim}")
    if not np.all(np.isfinite(batch)):
        raise ValueError("batch has non-finite entries")
    return batch


def _forward_cache(net: DenseNet, batch: np.ndarray) -> list[np.ndarray]:
    act, _ = ACTIVATIONS[net.activation]
    outs = [batch]
    last = len(net.weights) - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = outs[-1] @ W + b
        outs.append(z if k == last else act(z))
    return outs


def forward(net: DenseNet, batch: np.ndarray) -> np.ndarray:
    return _forward_cache(net, _check_batch(net, batch))[-1]


def backward(net: DenseNet, batch: np.ndarray, upstream: np.ndarray):
    """Gradients of ``sum(upstream * forward(net, batch))``.

    Returns ``(param_grads, input_grad)`` with ``param_grads`` ordered like
    :meth:`DenseNet.params`.
    """
    batch = _check_batch(net, batch)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (batch.shape[0], net.output_dim):
        raise ValueError(f"upstream gradient has shape {upstream.shape}")
    _, dact = ACTIVATIONS[net.activation]
    outs = _forward_cache(net, batch)
    grads: list[np.ndarray] = []
    delta = upstream
    for k in range(len(net.weights) - 1, -1, -1):
        if k != len(net.weights) - 1:
            delta = delta * dact(outs[k + 1])
        grads.append(delta.sum(axis=0))
        grads.append(outs[k].T @ delta)
        delta = delta @ net.weights[k].T
    grads.reverse()
    return grads, delta


def value_and_input_gradient(net: DenseNet, batch: np.ndarray, upstream: np.ndarray):
    """Forward output and the input gradient only; skips parameter gradients."""
    _, dact = ACTIVATIONS[net.activation]
    outs = _forward_cache(net, batch)
    delta = upstream
    last = len(net.weights) - 1
    for k in range(last, -1, -1):
        if k != last:
            delta = delta * dact(outs[k + 1])
        delta = delta @ net.weights[k].T
    return outs[-1], delta


def clip_params(net: DenseNet, c: float) -> None:
    if c < 0:
        raise ValueError("clip bound must be non-negative")
    for p in net.weights + net.biases:
        np.clip(p, -c, c, out=p)


def max_abs_param(net: DenseNet) -> float:
    return max(float(np.abs(p).max()) for p in net.params())


def lipschitz_upper_bound(net: DenseNet) -> float:
    """Product over layers of the max column absolute sum, times the activation slopes.

    Bounds ``|T(a) - T(b)| / ||a - b||_inf`` and hence the Euclidean quotient.
    """
    bound = 1.0
    for W in net.weights:
        bound *= float(np.abs(W).sum(axis=0).max())
    return bound * ACTIVATION_SLOPE[net.activation] ** (len(net.weights) - 1)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns new arrays and advances ``state``."""
    if not state.m:
        state.m = [np.zeros_like(p, dtype=float) for p in params]
        state.v = [np.zeros_like(p, dtype=float) for p in params]
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradients do not match parameter shapes")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        out.append(p - state.lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + state.eps))
    return out


@dataclass
class CriticModel:
    net: DenseNet
    clip_bound: float = np.inf

    @classmethod
    def create(cls, d: int, hidden: int = 16, seed=None) -> "CriticModel":
        return cls(DenseNet.create([d, hidden, 1], "tanh", seed))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return forward(self.net, X)[:, 0]

    def clip(self, c: float) -> None:
        self.clip_bound = c
        clip_params(self.net, c)


class LinearFittingModel:
    """``X_hat = X @ W``; the weight matrix is the weighted adjacency itself."""

    def __init__(self, W: np.ndarray):
        self.W = np.array(W, dtype=float)

    @classmethod
    def zeros(cls, d: int) -> "LinearFittingModel":
        return cls(np.zeros((d, d)))

    @property
    def d(self) -> int:
        return self.W.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.W]

    def set_params(self, params) -> None:
        self.W = np.array(params[0], dtype=float)

    def forward(self, X: np.ndarray) -> np.ndarray:
        return X @ self.W

    def backward(self, X: np.ndarray, upstream: np.ndarray):
        return [X.T @ upstream], upstream @ self.W.T

    def adjacency(self) -> np.ndarray:
        return self.W.copy()


class MLPFittingModel:
    """One single-hidden-layer MLP per variable, evaluated jointly.

    ``W1[j, i, :]`` are the first-layer weights through which net ``j`` reads
    input ``i``; their Euclidean norm is the weighted edge ``i -> j``.
    """

    def __init__(self, W1, b1, W2, b2, activation: str = "sigmoid"):
        self.W1 = np.array(W1, dtype=float)
        self.b1 = np.array(b1, dtype=float)
        self.W2 = np.array(W2, dtype=float)
        self.b2 = np.array(b2, dtype=float)
        self.activation = activation
        d, d_in, m = self.W1.shape
        if d != d_in or self.b1.shape != (d, m) or self.W2.shape != (d, m) or self.b2.shape != (d,):
            raise ValueError("inconsistent per-node network shapes")

    @classmethod
    def create(cls, d: int, hidden: int = 10, seed=None, zero_first_layer: bool = True) -> "MLPFittingModel":
        rng = np.random.default_rng(seed)
        if zero_first_layer:
            W1 = np.zeros((d, d, hidden))
        else:
            W1 = np.stack([glorot_uniform(rng, d, hidden) for _ in range(d)])
        W2 = np.stack([glorot_uniform(rng, hidden, 1)[:, 0] for _ in range(d)])
        return cls(W1, np.zeros((d, hidden)), W2, np.zeros(d))

    @classmethod
    def from_nets(cls, nets: list[DenseNet]) -> "MLPFittingModel":
        W1 = np.stack([n.weights[0] for n in nets])
        b1 = np.stack([n.biases[0] for n in nets])
        W2 = np.stack([n.weights[1][:, 0] for n in nets])
        b2 = np.array([n.biases[1][0] for n in nets])
        return cls(W1, b1, W2, b2, nets[0].activation)

    @property
    def d(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[2]

    def net(self, j: int) -> DenseNet:
        return DenseNet(
            [self.W1[j].copy(), self.W2[j][:, None].copy()],
            [self.b1[j].copy(), self.b2[j : j + 1].copy()],
            self.activation,
        )

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def set_params(self, params) -> None:
        self.W1, self.b1, self.W2, self.b2 = (np.array(p, dtype=float) for p in params)

    def _hidden(self, X):
        n = X.shape[0]
        d, _, m = self.W1.shape
        W1flat = self.W1.transpose(1, 0, 2).reshape(d, d * m)
        act, _ = ACTIVATIONS[self.activation]
        return act((X @ W1flat).reshape(n, d, m) + self.b1), W1flat

    def forward(self, X: np.ndarray) -> np.ndarray:
        A, _ = self._hidden(X)
        return np.einsum("njk,jk->nj", A, self.W2) + self.b2

    def backward(self, X: np.ndarray, upstream: np.ndarray):
        n = X.shape[0]
        d, _, m = self.W1.shape
        _, dact = ACTIVATIONS[self.activation]
        A, W1flat = self._hidden(X)
        dW2 = np.einsum("njk,nj->jk", A, upstream)
        db2 = upstream.sum(axis=0)
        dZ = upstream[:, :, None] * self.W2[None] * dact(A)
        db1 = dZ.sum(axis=0)
        dZflat = dZ.reshape(n, d * m)
        dW1 = (X.T @ dZflat).reshape(d, d, m).transpose(1, 0, 2)
        dX = dZflat @ W1flat.T
        return [dW1, db1, dW2, db2], dX

    def squared_adjacency(self) -> np.ndarray:
        # A[i, j] = sum_k W1[j, i, k]^2
        return np.sum(self.W1 * self.W1, axis=2).T

    def adjacency(self) -> np.ndarray:
        return np.sqrt(self.squared_adjacency())


def extract_weighted_adjacency(model) -> np.ndarray:
    return model.adjacency()


def save_net(path, net: DenseNet) -> None:
    record = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "activation": net.activation,
        "layers": [
            {"shape": list(W.shape), "weight": W.ravel().tolist(), "bias": b.tolist()}
            for W, b in zip(net.weights, net.biases)
        ],
    }
    Path(path).write_text(json.dumps(record))


def load_net(path) -> DenseNet:
    record = json.loads(Path(path).read_text())
    if record.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {record.get('version')}")
    weights, biases = [], []
    for layer in record["layers"]:
        weights.append(np.array(layer["weight"], dtype=float).reshape(layer["shape"]))
        biases.append(np.array(layer["bias"], dtype=float))
    return DenseNet(weights, biases, record["activation"])
