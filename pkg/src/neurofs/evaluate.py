"""Downstream evaluation: k-NN accuracy, recovery rate and rank scores."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

from .data import Dataset

DEFAULT_K = 5


def knn_predict(X_train, y_train, X_test, k=DEFAULT_K, exclude_self=False, chunk=512) -> np.ndarray:
    """Brute-force Euclidean k-NN.

    Neighbours are ordered by (distance, train index); the vote goes to the
    most frequent label among the k, smallest label on a tie. With
    ``exclude_self`` test row i never uses train row i (leave-one-out when
    test is train).
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    X_test = np.asarray(X_test, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    n_classes = int(y_train.max()) + 1
    avail = len(X_train) - (1 if exclude_self else 0)
    if not 1 <= k <= avail:
        raise ValueError(f"k={k} must be in 1..{avail}")
    preds = np.empty(len(X_test), dtype=np.int64)
    for s in range(0, len(X_test), chunk):
        D = cdist(X_test[s : s + chunk], X_train, metric="sqeuclidean")
        if exclude_self:
            rows = np.arange(D.shape[0])
            D[rows, rows + s] = np.inf
        nearest = np.argsort(D, axis=1, kind="stable")[:, :k]
        votes = y_train[nearest]
        for i, v in enumerate(votes):
            preds[s + i] = np.bincount(v, minlength=n_classes).argmax()
    return preds


def knn_accuracy(train: Dataset, test: Dataset, selected, k: int = DEFAULT_K, exclude_self: bool = False) -> float:
    selected = np.asarray(selected, dtype=np.int64)
    if selected.size == 0:
        raise ValueError("empty feature selection")
    if selected.min() < 0 or selected.max() >= train.d:
        raise ValueError("selected feature index out of range")
    if k > train.m:
        raise ValueError(f"k={k} exceeds the {train.m} training samples")
    preds = knn_predict(train.X[:, selected], train.y, test.X[:, selected], k, exclude_self)
    return float(np.mean(preds == test.y))


def recovery_rate(selected, informative) -> float:
    informative = set(int(i) for i in informative)
    if not informative:
        raise ValueError("empty informative set")
    return len(informative & set(int(i) for i in selected)) / len(informative)


@dataclass
class AccuracyTable:
    methods: list
    settings: list
    values: np.ndarray  # methods x settings

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.methods), len(self.settings)):
            raise ValueError(
                f"table shape {self.values.shape} does not match "
                f"{len(self.methods)} methods x {len(self.settings)} settings"
            )
        if np.any((self.values < 0) | (self.values > 1)):
            raise ValueError("accuracies must lie in [0, 1]")

    @classmethod
    def read_csv(cls, path) -> "AccuracyTable":
        with open(Path(path), newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        header, body = rows[0], rows[1:]
        for r in body:
            if len(r) != len(header):
                raise ValueError("non-rectangular accuracy table")
        return cls([r[0] for r in body], header[1:], [[float(v) for v in r[1:]] for r in body])

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", *self.settings])
            for name, row in zip(self.methods, self.values):
                w.writerow([name, *(repr(float(v)) for v in row)])


def rank_scores(table: AccuracyTable) -> dict:
    """Per-column rank (0 = worst, n-1 = best, ties averaged), then mean per method."""
    ranks = np.column_stack([rankdata(col, method="average") - 1 for col in table.values.T])
    return dict(zip(table.methods, ranks.mean(axis=1).tolist()))
