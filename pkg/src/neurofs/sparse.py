"""Sparse layer storage, Erdos-Renyi initialisation and cost accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

CHECKPOINT_VERSION = 1


def top_k(values: np.ndarray, k: int) -> np.ndarray:
    """Positions of the ``k`` largest values; ties go to the lower position.

    Returned in ascending position order.
    """
    values = np.asarray(values)
    n = values.shape[0]
    k = max(0, min(int(k), n))
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if k == n:
        return np.arange(n, dtype=np.int64)
    kth = np.partition(values, n - k)[n - k]
    above = np.flatnonzero(values > kth)
    ties = np.flatnonzero(values == kth)[: k - len(above)]
    return np.sort(np.concatenate([above, ties]))


def bottom_k(values: np.ndarray, k: int) -> np.ndarray:
    """Positions of the ``k`` smallest values; ties go to the lower position."""
    return top_k(-np.asarray(values, dtype=np.float64), k)


class SparseLayer:
    """One sparse weight matrix stored as coordinates sorted by (row, col).

    ``weights`` and ``momentum`` are aligned with ``rows``/``cols``. Because
    entries are kept in row-major order, the CSR view shares the weight
    buffer and in-place SGD updates are visible to it without rebuilding.
    """

    def __init__(self, n_in, n_out, rows, cols, weights, momentum=None, bias=None, bias_momentum=None):
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        momentum = np.zeros_like(weights) if momentum is None else np.asarray(momentum, dtype=np.float64)
        keys = rows * self.n_out + cols
        order = np.argsort(keys, kind="stable")
        if len(keys) and np.any(np.diff(keys[order]) == 0):
            raise ValueError("duplicate connections in layer")
        self.rows = rows[order]
        self.cols = cols[order]
        self.weights = weights[order].copy()
        self.momentum = momentum[order].copy()
        self.bias = np.zeros(self.n_out) if bias is None else np.asarray(bias, dtype=np.float64).copy()
        self.bias_momentum = (
            np.zeros(self.n_out) if bias_momentum is None else np.asarray(bias_momentum, dtype=np.float64).copy()
        )
        self._csr = None
        self._row_index = None

    @property
    def nnz(self) -> int:
        return len(self.weights)

    @property
    def keys(self) -> np.ndarray:
        return self.rows * self.n_out + self.cols

    def row_nnz(self) -> np.ndarray:
        return np.bincount(self.rows, minlength=self.n_in)

    def active_rows(self) -> np.ndarray:
        return np.flatnonzero(self.row_nnz())

    def mask_dense(self) -> np.ndarray:
        m = np.zeros((self.n_in, self.n_out), dtype=bool)
        m[self.rows, self.cols] = True
        return m

    def to_dense(self) -> np.ndarray:
        W = np.zeros((self.n_in, self.n_out))
        W[self.rows, self.cols] = self.weights
        return W

    def csr(self) -> sp.csr_matrix:
        if self._csr is None:
            indptr = np.zeros(self.n_in + 1, dtype=np.int64)
            np.cumsum(self.row_nnz(), out=indptr[1:])
            self._csr = sp.csr_matrix(
                (self.weights, self.cols, indptr), shape=(self.n_in, self.n_out), copy=False
            )
        return self._csr

    def row_index(self) -> tuple[np.ndarray, np.ndarray]:
        """(rows with >=1 entry, position of each entry's row in that list)."""
        if self._row_index is None:
            present, pos = np.unique(self.rows, return_inverse=True)
            self._row_index = (present, pos)
        return self._row_index

    def _invalidate(self):
        self._csr = None
        self._row_index = None

    def remove(self, entry_idx) -> int:
        """Drop the entries at positions ``entry_idx`` with their momentum."""
        entry_idx = np.unique(np.asarray(entry_idx, dtype=np.int64))
        if len(entry_idx) == 0:
            return 0
        keep = np.ones(self.nnz, dtype=bool)
        keep[entry_idx] = False
        self.rows = self.rows[keep]
        self.cols = self.cols[keep]
        self.weights = self.weights[keep]
        self.momentum = self.momentum[keep]
        self._invalidate()
        return len(entry_idx)

    def add(self, rows, cols, weights=None) -> int:
        """Insert new connections (weight 0 unless given, momentum 0)."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if len(rows) == 0:
            return 0
        weights = np.zeros(len(rows)) if weights is None else np.asarray(weights, dtype=np.float64)
        all_rows = np.concatenate([self.rows, rows])
        all_cols = np.concatenate([self.cols, cols])
        keys = all_rows * self.n_out + all_cols
        order = np.argsort(keys, kind="stable")
        if np.any(np.diff(keys[order]) == 0):
            raise ValueError("attempt to add an existing connection")
        self.rows = all_rows[order]
        self.cols = all_cols[order]
        self.weights = np.concatenate([self.weights, weights])[order]
        self.momentum = np.concatenate([self.momentum, np.zeros(len(rows))])[order]
        self._invalidate()
        return len(rows)

    def copy(self) -> "SparseLayer":
        return SparseLayer(
            self.n_in, self.n_out, self.rows, self.cols, self.weights,
            self.momentum, self.bias, self.bias_momentum,
        )


@dataclass
class Topology:
    layers: list[SparseLayer]
    dims: list[int]
    epsilon: float = 0.0
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.layers) != max(0, len(self.dims) - 1):
            raise ValueError("layer count does not match dims")
        for l, layer in enumerate(self.layers):
            if (layer.n_in, layer.n_out) != (self.dims[l], self.dims[l + 1]):
                raise ValueError(f"layer {l} shape does not match dims")

    def nnz(self) -> list[int]:
        return [layer.nnz for layer in self.layers]


def layer_nnz(n_in: int, n_out: int, epsilon: float) -> int:
    """Erdos-Renyi connection count ``epsilon * (n_in + n_out)``, capped at dense."""
    if n_in < 1 or n_out < 1:
        raise ValueError("layer sizes must be positive")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return min(max(1, math.floor(epsilon * (n_in + n_out))), n_in * n_out)


def er_init(dims, epsilon: float, seed: int = 0) -> Topology:
    dims = [int(n) for n in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"invalid dims {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        nnz = layer_nnz(n_in, n_out, epsilon)
        keys = np.sort(rng.choice(n_in * n_out, size=nnz, replace=False))
        bound = math.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-bound, bound, size=nnz)
        layers.append(SparseLayer(n_in, n_out, keys // n_out, keys % n_out, w))
    return Topology(layers, dims, epsilon, seed)


def param_count(topology: Topology) -> int:
    """Total connection count; biases are not counted."""
    return sum(layer.nnz for layer in topology.layers)


def sparse_param_count(dims, epsilon: float) -> int:
    return sum(layer_nnz(a, b, epsilon) for a, b in zip(dims[:-1], dims[1:]))


def dense_param_count(dims) -> int:
    return sum(a * b for a, b in zip(dims[:-1], dims[1:]))


def training_flops(params: int, m_train: int, epochs: int) -> int:
    """2 FLOPs per weight forward and 4 backward, per sample per epoch."""
    return 6 * int(params) * int(m_train) * int(epochs)


def save_checkpoint(topology: Topology, path) -> None:
    arrays = {
        "version": np.array(CHECKPOINT_VERSION),
        "dims": np.array(topology.dims, dtype=np.int64),
        "epsilon": np.array(topology.epsilon, dtype=np.float64),
        "seed": np.array(topology.seed, dtype=np.int64),
    }
    for l, layer in enumerate(topology.layers):
        arrays[f"l{l}_rows"] = layer.rows
        arrays[f"l{l}_cols"] = layer.cols
        arrays[f"l{l}_weights"] = layer.weights
        arrays[f"l{l}_momentum"] = layer.momentum
        arrays[f"l{l}_bias"] = layer.bias
        arrays[f"l{l}_bias_momentum"] = layer.bias_momentum
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> Topology:
    with np.load(Path(path)) as z:
        version = int(z["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        dims = [int(n) for n in z["dims"]]
        layers = [
            SparseLayer(
                dims[l], dims[l + 1], z[f"l{l}_rows"], z[f"l{l}_cols"], z[f"l{l}_weights"],
                z[f"l{l}_momentum"], z[f"l{l}_bias"], z[f"l{l}_bias_momentum"],
            )
            for l in range(len(dims) - 1)
        ]
        return Topology(layers, dims, float(z["epsilon"]), int(z["seed"]))
