"""Sparse MLP forward/backward passes and SGD with momentum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .sparse import Topology

PROB_FLOOR = 1e-12


@dataclass
class NetConfig:
    hidden: tuple = (1000, 1000, 1000)
    hidden_activation: str = "tanh"
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 100

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.hidden_activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.hidden_activation!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden sizes must be positive")

    def dims(self, d: int, n_classes: int) -> list[int]:
        return [d, *self.hidden, n_classes]


@dataclass
class ForwardPass:
    activations: list  # input to each layer; activations[0] is the batch itself
    probs: np.ndarray


def _activate(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activation_grad(a, kind):
    # expressed through the activation output; relu'(0) = 0
    if kind == "tanh":
        return 1.0 - a * a
    return (a > 0).astype(a.dtype)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sparse_matmul(a, layer):
    # (B, n_in) @ (n_in, n_out) via the CSR transpose, so no dense weight copy exists
    return (layer.csr().T @ a.T).T


def forward(topology: Topology, X: np.ndarray, cfg: NetConfig) -> ForwardPass:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != topology.dims[0]:
        raise ValueError(f"expected batch with {topology.dims[0]} columns, got shape {X.shape}")
    acts = [X]
    a = X
    last = len(topology.layers) - 1
    for l, layer in enumerate(topology.layers):
        z = _sparse_matmul(a, layer) + layer.bias
        if l < last:
            a = _activate(z, cfg.hidden_activation)
            acts.append(a)
        else:
            probs = softmax(z)
    return ForwardPass(acts, probs)


def loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy with probabilities floored at 1e-12."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= probs.shape[1]:
        raise ValueError("label out of range")
    p = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(p, PROB_FLOOR))))


def backward(topology: Topology, fp: ForwardPass, labels, cfg: NetConfig, snapshot_layers=()):
    """Back-propagate the mean cross-entropy of one batch.

    Returns ``(grads, snapshot)``. ``grads[l]`` is ``(weight_grad, bias_grad)``
    with ``weight_grad`` aligned to layer ``l``'s mask entries. ``snapshot``
    maps each requested layer index to its full dense ``n_in x n_out``
    gradient, which is where regrowth candidates are ranked from.
    """
    labels = np.asarray(labels, dtype=np.int64)
    B = len(labels)
    snapshot_layers = set(snapshot_layers)
    delta = fp.probs.copy()
    delta[np.arange(B), labels] -= 1.0
    delta /= B

    grads = [None] * len(topology.layers)
    snapshot = {}
    for l in range(len(topology.layers) - 1, -1, -1):
        layer = topology.layers[l]
        a = fp.activations[l]
        if l in snapshot_layers:
            full = a.T @ delta
            snapshot[l] = full
            gw = full[layer.rows, layer.cols]
        elif layer.nnz:
            present, pos = layer.row_index()
            part = a[:, present].T @ delta
            gw = part[pos, layer.cols]
        else:
            gw = np.zeros(0)
        grads[l] = (gw, delta.sum(axis=0))
        if l > 0:
            back = (layer.csr() @ delta.T).T
            delta = back * _activation_grad(a, cfg.hidden_activation)
    return grads, snapshot


def sgd_step(topology: Topology, grads, cfg: NetConfig) -> None:
    """v <- momentum * v + g; w <- w - lr * v, in place (weights and biases)."""
    for layer, (gw, gb) in zip(topology.layers, grads):
        layer.momentum *= cfg.momentum
        layer.momentum += gw
        layer.weights -= cfg.lr * layer.momentum
        layer.bias_momentum *= cfg.momentum
        layer.bias_momentum += gb
        layer.bias -= cfg.lr * layer.bias_momentum


def train_epoch(topology: Topology, train: Dataset, cfg: NetConfig, rng: np.random.Generator, snapshot_layers=None):
    """One pass of mini-batch SGD over a shuffled copy of ``train``.

    The dense gradient snapshot is taken on the final mini-batch, at the
    weights before that batch's update. ``snapshot_layers=None`` means all
    layers. Returns ``(mean_loss, snapshot)``.
    """
    if snapshot_layers is None:
        snapshot_layers = range(len(topology.layers))
    order = rng.permutation(train.m)
    starts = range(0, train.m, cfg.batch_size)
    total = 0.0
    snapshot = {}
    for b, s in enumerate(starts):
        idx = order[s : s + cfg.batch_size]
        fp = forward(topology, train.X[idx], cfg)
        total += loss(fp.probs, train.y[idx]) * len(idx)
        want = snapshot_layers if b == len(starts) - 1 else ()
        grads, snap = backward(topology, fp, train.y[idx], cfg, want)
        if snap:
            snapshot = snap
        sgd_step(topology, grads, cfg)
    return total / train.m, snapshot


def predict(topology: Topology, X: np.ndarray, cfg: NetConfig, batch: int = 1000) -> np.ndarray:
    out = [forward(topology, X[s : s + batch], cfg).probs.argmax(axis=1) for s in range(0, len(X), batch)]
    return np.concatenate(out)
