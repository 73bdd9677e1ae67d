"""Dataset loading, scaling, splitting and synthetic generation."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class DataError(ValueError):
    """Raised for malformed or unusable input data."""


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    n_classes: int = 0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise DataError(f"X must be 2-D, got shape {self.X.shape}")
        m, d = self.X.shape
        if m < 1 or d < 1:
            raise DataError("dataset needs at least one sample and one feature")
        if self.y.shape != (m,):
            raise DataError(f"expected {m} labels, got {self.y.shape}")
        if not np.all(np.isfinite(self.X)):
            raise DataError("non-finite feature values")
        if not self.feature_names:
            self.feature_names = [f"f{j}" for j in range(d)]
        if len(self.feature_names) != d:
            raise DataError("feature_names length does not match feature count")
        if not self.n_classes:
            self.n_classes = int(self.y.max()) + 1
        if self.y.min() < 0 or self.y.max() >= self.n_classes:
            raise DataError("labels outside 0..n_classes-1")

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], list(self.feature_names), self.n_classes)

    def with_X(self, X) -> "Dataset":
        return Dataset(X, self.y.copy(), list(self.feature_names), self.n_classes)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _densify(raw_labels: list[str]) -> tuple[np.ndarray, list[str]]:
    uniq = sorted(set(raw_labels))
    if all(_is_number(u) for u in uniq):
        uniq = sorted(uniq, key=float)
    if len(uniq) < 2:
        raise DataError("single-class data")
    lookup = {u: i for i, u in enumerate(uniq)}
    return np.array([lookup[r] for r in raw_labels], dtype=np.int64), uniq


def load_csv(path, label_column=-1) -> Dataset:
    """Read a comma-separated file into a Dataset.

    A header row is assumed when any cell of the first row is non-numeric.
    ``label_column`` is a column index (negative counts from the end) or,
    with a header, a column name. Labels are remapped to 0..C-1.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DataError(f"empty file: {path}")

    width = len(rows[0])
    for lineno, r in enumerate(rows, start=1):
        if len(r) != width:
            raise DataError(f"ragged rows: line {lineno} has {len(r)} fields, expected {width}")

    header = None
    if not all(_is_number(c) for c in rows[0]):
        header, rows = [c.strip() for c in rows[0]], rows[1:]
    if not rows:
        raise DataError("no data rows")

    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if header is None or label_column not in header:
            raise DataError(f"label column {label_column!r} not present")
        lc = header.index(label_column)
    else:
        lc = int(label_column)
        if not -width <= lc < width:
            raise DataError(f"label column {lc} not present")
        lc %= width
    if width < 2:
        raise DataError("need at least one feature column besides the label")

    feat_cols = [j for j in range(width) if j != lc]
    X = np.empty((len(rows), len(feat_cols)))
    for i, r in enumerate(rows):
        for k, j in enumerate(feat_cols):
            try:
                X[i, k] = float(r[j])
            except ValueError:
                raise DataError(
                    f"non-numeric feature at row {i + 1}, column {j}: {r[j]!r}"
                ) from None
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite feature values")
    y, _ = _densify([r[lc].strip() for r in rows])
    names = [header[j] for j in feat_cols] if header else [f"f{j}" for j in range(len(feat_cols))]
    return Dataset(X, y, names, int(y.max()) + 1)


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _idx_header(buf: bytes, expected_magic: int, ndim: int, what: str):
    if len(buf) < 4 * (1 + ndim):
        raise DataError(f"{what} file truncated in header")
    magic = struct.unpack(">I", buf[:4])[0]
    if magic != expected_magic:
        raise DataError(f"bad magic number in {what} file: {magic:#010x}")
    return struct.unpack(f">{ndim}I", buf[4 : 4 * (1 + ndim)])


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label pair (MNIST layout), optionally gzipped."""
    img = _read_bytes(images_path)
    lab = _read_bytes(labels_path)
    n_img, rows, cols = _idx_header(img, IDX_IMAGE_MAGIC, 3, "image")
    (n_lab,) = _idx_header(lab, IDX_LABEL_MAGIC, 1, "label")
    if n_img != n_lab:
        raise DataError(f"count mismatch: {n_img} images vs {n_lab} labels")
    need = 16 + n_img * rows * cols
    if len(img) < need:
        raise DataError(f"image file truncated: {len(img)} bytes, expected {need}")
    if len(lab) < 8 + n_lab:
        raise DataError(f"label file truncated: {len(lab)} bytes, expected {8 + n_lab}")
    pixels = np.frombuffer(img, dtype=np.uint8, count=n_img * rows * cols, offset=16)
    X = pixels.reshape(n_img, rows * cols).astype(np.float64)
    raw = np.frombuffer(lab, dtype=np.uint8, count=n_lab, offset=8).astype(np.int64)
    uniq = np.unique(raw)
    if len(uniq) < 2:
        raise DataError("single-class data")
    y = np.searchsorted(uniq, raw)
    names = [f"px_{r}_{c}" for r in range(rows) for c in range(cols)]
    return Dataset(X, y, names, len(uniq))


def scale_minmax(train: Dataset, others=()) -> tuple[Dataset, list[Dataset]]:
    """Min-max scale with statistics from ``train``; constant columns become 0."""
    lo = train.X.min(axis=0)
    span = train.X.max(axis=0) - lo
    const = span == 0
    span[const] = 1.0

    def apply(ds):
        Z = (ds.X - lo) / span
        Z[:, const] = 0.0
        return ds.with_X(Z)

    return apply(train), [apply(o) for o in others]


def scale_standard(train: Dataset, others=()) -> tuple[Dataset, list[Dataset]]:
    """Zero-mean, unit-variance scaling (population std) fit on ``train``."""
    mu = train.X.mean(axis=0)
    sd = train.X.std(axis=0)
    const = sd == 0
    sd[const] = 1.0

    def apply(ds):
        Z = (ds.X - mu) / sd
        Z[:, const] = 0.0
        return ds.with_X(Z)

    return apply(train), [apply(o) for o in others]


def split(ds: Dataset, test_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if ds.m < 2:
        raise DataError("need at least two samples to split")
    rng = np.random.default_rng(seed)
    counts = np.bincount(ds.y, minlength=ds.n_classes)
    present = counts[counts > 0]
    test_idx = []
    if np.all(present >= 2):
        for c in np.flatnonzero(counts):
            members = rng.permutation(np.flatnonzero(ds.y == c))
            n_test = min(len(members) - 1, max(1, round(test_fraction * len(members))))
            test_idx.append(members[:n_test])
        test_idx = np.sort(np.concatenate(test_idx))
    else:
        perm = rng.permutation(ds.m)
        n_test = min(ds.m - 1, max(1, round(test_fraction * ds.m)))
        test_idx = np.sort(perm[:n_test])
    is_test = np.zeros(ds.m, dtype=bool)
    is_test[test_idx] = True
    return ds.subset(np.flatnonzero(~is_test)), ds.subset(np.flatnonzero(is_test))


@dataclass
class SyntheticSpec:
    d: int = 500
    m: int = 2000
    n_informative: int = 20
    noise_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_informative > self.d:
            raise DataError("n_informative exceeds d")
        if self.n_informative < 0 or self.m < 2 or self.d < 1:
            raise DataError("invalid synthetic dimensions")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be >= 0")


def gen_synthetic(spec: SyntheticSpec) -> tuple[Dataset, np.ndarray]:
    """Binary task driven by ``n_informative`` features; the rest is noise.

    Every informative feature enters the score linearly and disjoint pairs of
    them also enter through their product. The score is standardised, noise
    of scale ``noise_sigma`` is added, and labels are thresholded at the
    median so the classes are balanced.
    """
    rng = np.random.default_rng(spec.seed)
    X = rng.standard_normal((spec.m, spec.d))
    informative = np.sort(rng.choice(spec.d, spec.n_informative, replace=False))
    if spec.n_informative == 0:
        y = rng.permutation(np.arange(spec.m) % 2)
        return Dataset(X, y, n_classes=2), informative

    signs = rng.choice([-1.0, 1.0], size=spec.n_informative)
    lin = signs * rng.uniform(0.5, 1.5, size=spec.n_informative)
    score = X[:, informative] @ lin
    order = rng.permutation(informative)
    for a, b in zip(order[0::2], order[1::2]):
        coef = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.5)
        score += coef * X[:, a] * X[:, b]
    score = (score - score.mean()) / score.std()
    score += spec.noise_sigma * rng.standard_normal(spec.m)
    y = (score > np.median(score)).astype(np.int64)
    return Dataset(X, y, n_classes=2), informative
