"""Distances between flattened weight vectors.

All comparisons in this package go through `distance`, so the trainer, the
verifier, and the benches cannot drift apart on what "close" means.
"""
from __future__ import annotations

import numpy as np

METRIC_NAMES = ("l1", "l2", "linf", "cos")


def distance(name, a, b):
    """Distance between two equally shaped arrays, flattened.

    l1/l2/linf are the usual norms of (a - b). cos is 1 - cosine similarity;
    two zero vectors count as identical (0.0), a zero against a nonzero vector
    as maximally dissimilar under our convention (1.0).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if name == "l1":
        return float(np.sum(np.abs(a - b)))
    if name == "l2":
        return float(np.sqrt(np.sum((a - b) ** 2)))
    if name == "linf":
        return float(np.max(np.abs(a - b)))
    if name == "cos":
        na = float(np.linalg.norm(a))
        nb = float(np.linalg.norm(b))
        if na == 0.0 and nb == 0.0:
            return 0.0
        if na == 0.0 or nb == 0.0:
            return 1.0
        sim = float(np.dot(a, b)) / (na * nb)
        return max(0.0, 1.0 - sim)  # guard the 1 + 2e-16 rounding case
    raise ValueError(f"unknown metric {name!r}, expected one of {METRIC_NAMES}")


def update_magnitude(name, new, old):
    """Size of the move from `old` to `new` under the given metric."""
    return distance(name, new, old)
