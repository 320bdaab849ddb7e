"""Measurement suites: reproducibility limits, costs, and storage scaling.

The centerpiece is the reproducibility study. With update noise on, two
runs that share every seed except the noise stream drift apart, and the
drift compounds step by step until the reproduction is no closer to the
original than an independently trained model. That curve is what makes
full re-execution useless as a verification strategy and motivates
checking short segments from stored starting points instead.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .ksinit import check_initialization
from .metrics import distance
from .model import WeightVector
from .proof import CHECKPOINT_DTYPES, checkpoint_count, expected_transfer, proof_size_bytes
from .training import NO_NOISE, run_sgd
from .verify import verification_cost


def _snapshots(dataset, arch, hyper, epochs, noise, lengths, noise_seed=None):
    """Weights after each requested number of steps, from one run."""
    S = math.ceil(dataset.n / hyper.batch_size)
    T = epochs * S
    want = set(int(x) for x in lengths)
    bad = [x for x in want if not 0 <= x <= T]
    if bad:
        raise ValueError(f"step counts {sorted(bad)} outside [0, {T}]")
    snaps = {}

    def on_step(t, w, idx, eta_t):
        if t in want:
            snaps[t] = w.values.copy()

    res = run_sgd(dataset, arch, hyper, epochs, noise, noise_seed=noise_seed, on_step=on_step)
    if T in want:
        snaps[T] = res.weights.values
    return snaps


def reference_distance(dataset, arch, hyper, epochs, *, noise=NO_NOISE, other_seed=None, metric="l2"):
    """Distance between two runs that share nothing but the recipe.

    This is the natural yardstick for transcript anomalies: a spliced-in
    foreign model shows up as a single update of roughly this size.
    """
    other_seed = hyper.seed + 1 if other_seed is None else other_seed
    if other_seed == hyper.seed:
        raise ValueError("the comparison run needs a different seed")
    a = run_sgd(dataset, arch, hyper, epochs, noise).weights
    b = run_sgd(dataset, arch, replace(hyper, seed=other_seed), epochs, noise).weights
    return distance(metric, a.values, b.values)


@dataclass(frozen=True)
class ReproPoint:
    length: int  # steps re-run
    reproduction_gap: float  # fresh noise draws, everything else shared
    independent_gap: float  # fully different seed, same recipe
    epsilon: float  # ratio of the two


def epsilon_repr(
    dataset,
    arch,
    hyper,
    epochs,
    noise,
    lengths,
    *,
    fresh_noise_seed=None,
    indep_seed=None,
    metric="l2",
):
    """Normalized reproduction error after re-running `length` steps.

    Three trajectories: the reference, a reproduction differing only in
    its noise draws, and an independent run from another seed. epsilon is
    reproduction gap over independent gap at the same step, so it starts
    near zero and approaches one as the reproduction decorrelates.
    """
    if not noise.active:
        raise ValueError("the reproduction study needs update noise switched on")
    lengths = sorted(int(x) for x in lengths)
    if lengths and lengths[0] < 1:
        raise ValueError("step counts must be >= 1")
    fresh_noise_seed = hyper.seed + 0x5EED if fresh_noise_seed is None else fresh_noise_seed
    if fresh_noise_seed == hyper.seed:
        raise ValueError("fresh_noise_seed must differ from the run's own noise stream")
    indep_seed = hyper.seed + 1 if indep_seed is None else indep_seed
    if indep_seed == hyper.seed:
        raise ValueError("indep_seed must differ from hyper.seed")
    ref = _snapshots(dataset, arch, hyper, epochs, noise, lengths)
    rep = _snapshots(dataset, arch, hyper, epochs, noise, lengths, noise_seed=fresh_noise_seed)
    ind = _snapshots(dataset, arch, replace(hyper, seed=indep_seed), epochs, noise, lengths)
    points = []
    for n in lengths:
        gap = distance(metric, rep[n], ref[n])
        base = distance(metric, ind[n], ref[n])
        points.append(ReproPoint(n, gap, base, gap / base if base > 0 else math.inf))
    return points


def ks_steps(dataset, arch, hyper, epochs, noise, step_counts, *, alpha=0.01, bonferroni=True):
    """How quickly training walks the weights out of their init distribution.

    Snapshots one run at the given step counts and applies the init test
    to each. Rows: steps, min layer p-value, passed.
    """
    snaps = _snapshots(dataset, arch, hyper, epochs, noise, step_counts)
    rows = []
    for n in sorted(snaps):
        check = check_initialization(
            WeightVector(arch, snaps[n]), hyper.init_strategy, alpha=alpha, bonferroni=bonferroni
        )
        rows.append({"steps": n, "min_pvalue": check.min_pvalue, "passed": check.passed})
    return rows


def first_fail_step(rows):
    """Smallest step count at which the init test starts failing, or None."""
    for row in rows:
        if not row["passed"]:
            return row["steps"]
    return None


def lr_sweep(dataset, arch, hyper, epochs, noise, etas, *, length=None, metric="l2"):
    """Reproduction error at one fixed re-run length across learning rates.

    Small steps keep noise-perturbed trajectories close; near the edge of
    stability the same noise gets amplified and epsilon jumps.
    """
    S = math.ceil(dataset.n / hyper.batch_size)
    length = S if length is None else int(length)
    rows = []
    for eta in etas:
        (pt,) = epsilon_repr(dataset, arch, replace(hyper, eta=float(eta)), epochs, noise, [length], metric=metric)
        rows.append(
            {
                "eta": float(eta),
                "length": pt.length,
                "reproduction_gap": pt.reproduction_gap,
                "independent_gap": pt.independent_gap,
                "epsilon": pt.epsilon,
            }
        )
    return rows


def k_sweep(n_params, epochs, steps_per_epoch, ks, *, query_budget=1, dataset_size=None, dtype="f64"):
    """Storage and verification cost as the checkpoint interval grows."""
    itemsize = np.dtype(CHECKPOINT_DTYPES[dtype]).itemsize
    rows = []
    for k in ks:
        k = int(k)
        count = checkpoint_count(epochs, steps_per_epoch, k)
        cost = verification_cost(epochs, steps_per_epoch, query_budget, k)
        row = {
            "k": k,
            "checkpoints": count,
            "checkpoint_bytes": proof_size_bytes(epochs, steps_per_epoch, k, n_params * itemsize),
            "replayed_steps": cost["replayed_steps"],
            "cost_ratio": cost["ratio"],
        }
        if dataset_size is not None:
            row["expected_transfer"] = expected_transfer(
                dataset_size, query_budget, k, steps_per_epoch, epochs
            )
        rows.append(row)
    return rows


def cost_curve(epochs, steps_per_epoch, checkpoint_interval, query_budgets, *, dataset_size=None):
    """Verifier work as a function of the per-epoch query budget."""
    rows = []
    for q in query_budgets:
        q = int(q)
        cost = verification_cost(epochs, steps_per_epoch, q, checkpoint_interval)
        row = {
            "query_budget": q,
            "replayed_steps": cost["replayed_steps"],
            "cost_ratio": cost["ratio"],
        }
        if dataset_size is not None:
            row["expected_transfer"] = expected_transfer(
                dataset_size, q, checkpoint_interval, steps_per_epoch, epochs
            )
        rows.append(row)
    return rows


def storage_curve(n_params, epochs, steps_per_epoch, ks, dtypes=("f64", "f32", "f16")):
    """Checkpoint storage across intervals and precisions."""
    rows = []
    for k in ks:
        for dt in dtypes:
            itemsize = np.dtype(CHECKPOINT_DTYPES[dt]).itemsize
            rows.append(
                {
                    "k": int(k),
                    "dtype": dt,
                    "checkpoints": checkpoint_count(epochs, steps_per_epoch, int(k)),
                    "checkpoint_bytes": proof_size_bytes(
                        epochs, steps_per_epoch, int(k), n_params * itemsize
                    ),
                }
            )
    return rows


def write_csv(path, rows):
    """Write measurement rows so every float survives a round trip exactly."""
    if not rows:
        raise ValueError("no rows to write")
    fieldnames = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            out = {}
            for key, val in row.items():
                if val is None:
                    out[key] = ""
                elif isinstance(val, bool):
                    out[key] = "true" if val else "false"
                elif isinstance(val, float):
                    out[key] = repr(val)
                else:
                    out[key] = str(val)
            writer.writerow(out)


def _parse_cell(text):
    if text == "":
        return None
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_csv(path):
    with open(path, newline="") as fh:
        return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]
