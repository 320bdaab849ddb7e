"""Goodness-of-fit check that claimed starting weights match a fresh draw.

Each weight matrix is compared against the sampling distribution its init
strategy would have produced, using a one-sample Kolmogorov-Smirnov test.
Bias vectors are excluded: every supported strategy zeroes them, so they
carry no distributional information. P-values use the Kolmogorov limit
distribution with the Stephens finite-sample scaling, which stays accurate
down to the small layer sizes typical here (n around 64).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .model import INIT_STRATEGIES, init_scale

# Below this scaled statistic the CDF-side theta series converges fastest;
# above it the alternating SF series does. Both agree to ~1e-15 at the seam.
_SERIES_CROSSOVER = 1.18


def kolmogorov_sf(x):
    """Survival function of the Kolmogorov limit distribution."""
    x = float(x)
    if x <= 0.0:
        return 1.0
    if x < _SERIES_CROSSOVER:
        # SF = 1 - (sqrt(2 pi)/x) * sum exp(-(2r-1)^2 pi^2 / (8 x^2))
        c = -math.pi * math.pi / (8.0 * x * x)
        total = 0.0
        for r in range(1, 20):
            term = math.exp(c * (2 * r - 1) ** 2)
            total += term
            if term < 1e-18 * max(total, 1.0):
                break
        return min(1.0, max(0.0, 1.0 - math.sqrt(2.0 * math.pi) / x * total))
    total = 0.0
    for r in range(1, 200):
        term = math.exp(-2.0 * r * r * x * x)
        if r % 2 == 1:
            total += term
        else:
            total -= term
        if term < 1e-18:
            break
    return min(1.0, max(0.0, 2.0 * total))


def ks_statistic(samples, cdf):
    """Two-sided one-sample KS statistic of `samples` against `cdf`."""
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = x.size
    if n == 0:
        raise ValueError("KS statistic needs at least one sample")
    f = np.asarray(cdf(x), dtype=np.float64)
    i = np.arange(1, n + 1, dtype=np.float64)
    d_plus = np.max(i / n - f)
    d_minus = np.max(f - (i - 1.0) / n)
    return float(max(d_plus, d_minus, 0.0))


def init_cdf(strategy, fan_in, fan_out):
    """CDF of a single weight under the given init strategy."""
    kind, scale = init_scale(strategy, fan_in, fan_out)
    if kind == "uniform":
        bound = scale

        def cdf(x):
            return np.clip((np.asarray(x, dtype=np.float64) + bound) / (2.0 * bound), 0.0, 1.0)

        return cdf
    std = scale

    def cdf(x):
        return ndtr(np.asarray(x, dtype=np.float64) / std)

    return cdf


def ks_pvalue(statistic, n):
    """Finite-sample p-value via the Stephens-scaled limit distribution."""
    if n <= 0:
        raise ValueError("n must be positive")
    rn = math.sqrt(n)
    return kolmogorov_sf(statistic * (rn + 0.12 + 0.11 / rn))


@dataclass(frozen=True)
class LayerKsResult:
    layer: int
    n: int
    statistic: float
    pvalue: float


@dataclass(frozen=True)
class InitCheck:
    passed: bool
    alpha: float
    per_layer_alpha: float
    layers: tuple
    first_fail_layer: int  # -1 when passed

    @property
    def min_pvalue(self):
        return min(r.pvalue for r in self.layers)


def layer_test(values, strategy, fan_in, fan_out, layer=0):
    """KS test of one weight matrix against its init distribution."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    d = ks_statistic(flat, init_cdf(strategy, fan_in, fan_out))
    return LayerKsResult(layer=layer, n=flat.size, statistic=d, pvalue=ks_pvalue(d, flat.size))


def check_initialization(weights, strategy, alpha=0.01, bonferroni=True):
    """Test every weight matrix of `weights` against `strategy`.

    weights: a WeightVector. Passes only if every layer's p-value clears
    the (optionally Bonferroni-divided) significance level.
    """
    if strategy not in INIT_STRATEGIES:
        raise ValueError(f"unknown init strategy: {strategy!r}")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    dims = weights.arch.layer_dims
    n_layers = len(dims) - 1
    per_layer = alpha / n_layers if bonferroni else alpha
    results = []
    first_fail = -1
    for i in range(n_layers):
        w, _ = weights.layer(i)
        res = layer_test(w, strategy, dims[i], dims[i + 1], layer=i)
        results.append(res)
        if first_fail < 0 and res.pvalue < per_layer:
            first_fail = i
    return InitCheck(
        passed=first_fail < 0,
        alpha=alpha,
        per_layer_alpha=per_layer,
        layers=tuple(results),
        first_fail_layer=first_fail,
    )
