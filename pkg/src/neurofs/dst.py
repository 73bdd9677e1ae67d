"""Connection-level topology updates: magnitude pruning and regrowth."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .sparse import SparseLayer, bottom_k, top_k

log = logging.getLogger(__name__)

GROWTH_POLICIES = ("gradient", "random")


@dataclass
class HiddenUpdatePolicy:
    zeta_h: float = 0.3
    growth: str = "gradient"

    def __post_init__(self):
        if not 0 < self.zeta_h < 1:
            raise ValueError("zeta_h must be in (0, 1)")
        if self.growth not in GROWTH_POLICIES:
            raise ValueError(f"unknown growth policy {self.growth!r}")


def smallest_magnitude(layer: SparseLayer, count: int, candidates=None) -> np.ndarray:
    """Entry positions of the ``count`` smallest |w|; ties by (i, j) order.

    Entries are stored in (i, j) order, so a position tie-break is the
    lexicographic one.
    """
    mag = np.abs(layer.weights)
    if candidates is None:
        return bottom_k(mag, count)
    candidates = np.asarray(candidates, dtype=np.int64)
    return candidates[bottom_k(mag[candidates], count)]


def prune_hidden(layer: SparseLayer, zeta_h: float) -> int:
    """Remove floor(zeta_h * nnz) lowest-magnitude connections."""
    count = math.floor(zeta_h * layer.nnz)
    return layer.remove(smallest_magnitude(layer, count))


def _grow_by_score(layer: SparseLayer, score: np.ndarray, count: int, allowed_rows=None) -> int:
    """Add the ``count`` absent positions with the largest ``score``.

    ``score`` is a dense n_in x n_out array; ties break on flat (i, j) index.
    ``allowed_rows`` restricts candidates to those rows.
    """
    if allowed_rows is None:
        allowed_rows = np.arange(layer.n_in)
    allowed_rows = np.asarray(allowed_rows, dtype=np.int64)
    sub = score[allowed_rows].astype(np.float64, copy=True)
    mask = layer.mask_dense()[allowed_rows]
    sub[mask] = -np.inf
    capacity = sub.size - int(mask.sum())
    if count > capacity:
        log.warning("growth request %d exceeds capacity %d; clamped", count, capacity)
        count = capacity
    flat = top_k(sub.ravel(), count)
    r, c = np.divmod(flat, layer.n_out)
    return layer.add(allowed_rows[r], c)


def _grow_random(layer: SparseLayer, count: int, rng: np.random.Generator, allowed_rows=None) -> int:
    if allowed_rows is None:
        allowed_rows = np.arange(layer.n_in)
    allowed_rows = np.asarray(allowed_rows, dtype=np.int64)
    free = np.flatnonzero(~layer.mask_dense()[allowed_rows].ravel())
    if count > len(free):
        log.warning("growth request %d exceeds capacity %d; clamped", count, len(free))
        count = len(free)
    pick = np.sort(rng.choice(free, size=count, replace=False))
    r, c = np.divmod(pick, layer.n_out)
    return layer.add(allowed_rows[r], c)


def grow_connections(layer, dense_grad, count, growth="gradient", rng=None, allowed_rows=None) -> int:
    """Add ``count`` absent connections (zero weight and momentum).

    Returns the number actually added, which is smaller than ``count`` only
    when the candidate pool is exhausted.
    """
    if count <= 0:
        return 0
    if growth == "gradient":
        return _grow_by_score(layer, np.abs(dense_grad), count, allowed_rows)
    if rng is None:
        raise ValueError("random growth needs an rng")
    return _grow_random(layer, count, rng, allowed_rows)


def grow_hidden(layer: SparseLayer, dense_grad, count: int, policy: HiddenUpdatePolicy, rng=None) -> int:
    return grow_connections(layer, dense_grad, count, policy.growth, rng)


def update_layer(layer: SparseLayer, dense_grad, policy: HiddenUpdatePolicy, rng=None) -> tuple[int, int]:
    """Prune then regrow one layer; returns (removed, grown)."""
    removed = prune_hidden(layer, policy.zeta_h)
    grown = grow_hidden(layer, dense_grad, removed, policy, rng)
    return removed, grown
