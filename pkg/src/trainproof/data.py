"""Datasets and batch schedules.

A Dataset is an immutable-by-convention pair (inputs, labels) with a content
hash used to pin proofs to the exact bytes they trained on. Labels are int64
class ids for cross entropy or float64 targets for squared error.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np


@dataclass(eq=False)
class Dataset:
    inputs: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64 or float64
    _content_id: str = field(default=None, repr=False)

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.inputs, dtype=np.float64))
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError(f"inputs must be (n, d) with n, d >= 1, got {X.shape}")
        y = np.asarray(self.labels)
        if y.dtype.kind in "iu":
            y = np.ascontiguousarray(y, dtype=np.int64)
        else:
            y = np.ascontiguousarray(y, dtype=np.float64)
        if y.shape != (X.shape[0],):
            raise ValueError(f"labels must be ({X.shape[0]},), got {y.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("inputs must be finite")
        if y.dtype.kind == "f" and not np.all(np.isfinite(y)):
            raise ValueError("labels must be finite")
        self.inputs = X
        self.labels = y

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    @property
    def label_kind(self):
        return "int" if self.labels.dtype.kind == "i" else "float"

    @property
    def content_id(self):
        """Hex SHA-256 over shape header plus raw little-endian bytes of inputs and labels."""
        if self._content_id is None:
            h = hashlib.sha256()
            h.update(b"TPDS1")
            h.update(np.uint64(self.n).tobytes())
            h.update(np.uint64(self.dim).tobytes())
            h.update(b"i" if self.label_kind == "int" else b"f")
            h.update(self.inputs.astype("<f8").tobytes())
            code = "<i8" if self.label_kind == "int" else "<f8"
            h.update(self.labels.astype(code).tobytes())
            self._content_id = h.hexdigest()
        return self._content_id

    def batch(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return self.inputs[idx], self.labels[idx]


def make_synthetic_dataset(kind, n, d, classes, seed, separation=5.0, noise=0.1):
    """Deterministic toy classification data.

    gaussian_blobs: unit-variance gaussian clusters whose centers sit
    `separation` apart (on a circle in the first two dims; on a line for d=1).
    two_moons: the usual interleaved half circles (classes must be 2, d >= 2);
    `noise` is the gaussian jitter std. Class counts are balanced within one.
    """
    if n < 1 or d < 1 or classes < 1:
        raise ValueError("n, d and classes must all be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, 0xDA7A]))

    # balanced labels, first n % classes classes get the extra point
    counts = [n // classes + (1 if c < n % classes else 0) for c in range(classes)]
    labels = np.repeat(np.arange(classes, dtype=np.int64), counts)

    if kind == "gaussian_blobs":
        centers = np.zeros((classes, d))
        if d == 1:
            centers[:, 0] = separation * (np.arange(classes) - (classes - 1) / 2.0)
        else:
            ang = 2.0 * np.pi * np.arange(classes) / max(classes, 2)
            radius = separation / 2.0 if classes > 1 else 0.0
            centers[:, 0] = radius * np.cos(ang)
            centers[:, 1] = radius * np.sin(ang)
        X = centers[labels] + rng.standard_normal((n, d))
    elif kind == "two_moons":
        if classes != 2:
            raise ValueError("two_moons is inherently two-class")
        if d < 2:
            raise ValueError("two_moons needs d >= 2")
        t = rng.uniform(0.0, np.pi, size=n)
        X = np.zeros((n, d))
        top = labels == 0
        X[top, 0] = np.cos(t[top])
        X[top, 1] = np.sin(t[top])
        X[~top, 0] = 1.0 - np.cos(t[~top])
        X[~top, 1] = 0.5 - np.sin(t[~top])
        X[:, :2] += noise * rng.standard_normal((n, 2))
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")

    perm = rng.permutation(n)
    return Dataset(X[perm], labels[perm])


def load_csv_dataset(path, label_kind="int"):
    """Load a CSV with a header row; the last column is the label."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        rows = [row for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = len(header)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"{path}: row {i + 2} has {len(row)} fields, expected {width}")
    raw = np.asarray(rows, dtype=np.float64)
    X = raw[:, :-1]
    if label_kind == "int":
        y = raw[:, -1]
        if not np.all(y == np.round(y)):
            raise ValueError(f"{path}: labels are not integral; pass label_kind='float'")
        y = y.astype(np.int64)
    elif label_kind == "float":
        y = raw[:, -1].astype(np.float64)
    else:
        raise ValueError(f"label_kind must be 'int' or 'float', got {label_kind!r}")
    return Dataset(X, y)


def get_batches(dataset, batch_size, epoch_seed):
    """One epoch's batch schedule: a seeded permutation chunked into ceil(n/m) index sets.

    The last set keeps the remainder (may be smaller). Together the sets
    partition range(n) exactly once.
    """
    if not 1 <= batch_size <= dataset.n:
        raise ValueError(f"batch_size must be in [1, {dataset.n}], got {batch_size}")
    rng = np.random.default_rng(epoch_seed)
    perm = rng.permutation(dataset.n).astype(np.int64)
    return [perm[i : i + batch_size] for i in range(0, dataset.n, batch_size)]
