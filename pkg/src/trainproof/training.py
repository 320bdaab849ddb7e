"""SGD stepping, simulated execution noise, and the training loop.

Randomness discipline: a single run seed fans out into independent streams,
    init      SeedSequence([seed])            (inside init_weights)
    batches   SeedSequence([seed, 0xBA7C, epoch])
    noise     SeedSequence([noise_seed, 0x401E])
so batching is reproducible per epoch while the noise stream can be reseeded
independently (that is exactly what a retraining adversary gets to do).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import get_batches
from .model import (
    INIT_STRATEGIES,
    LOSSES,
    WeightVector,
    init_weights,
    loss_and_grad,
)

_BATCH_STREAM = 0xBA7C
_NOISE_STREAM = 0x401E

OPTIMIZERS = ("sgd",)


def _mask(seed):
    return int(seed) & 0xFFFFFFFFFFFFFFFF


def batch_stream_seed(seed, epoch):
    """SeedSequence for the batch permutation of one epoch."""
    return np.random.SeedSequence([_mask(seed), _BATCH_STREAM, int(epoch)])


def noise_stream_rng(noise_seed):
    """Fresh generator for the per-step noise draws of one run."""
    return np.random.default_rng(np.random.SeedSequence([_mask(noise_seed), _NOISE_STREAM]))


@dataclass(frozen=True)
class Hyperparams:
    """Per-run training knobs. `validate` applies the strict contract used at
    transcript-creation time; sgd_step itself tolerates eta == 0 (identity step)."""

    eta: float
    batch_size: int
    init_strategy: str = "xavier_uniform"
    loss_tag: str = "cross_entropy_softmax"
    optimizer_tag: str = "sgd"
    seed: int = 0

    def validate(self):
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise ValueError(f"eta must be positive and finite, got {self.eta}")
        if int(self.batch_size) < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.init_strategy not in INIT_STRATEGIES:
            raise ValueError(f"init strategy {self.init_strategy!r} not whitelisted")
        if self.loss_tag not in LOSSES:
            raise ValueError(f"loss {self.loss_tag!r} not whitelisted")
        if self.optimizer_tag not in OPTIMIZERS:
            raise ValueError(f"optimizer {self.optimizer_tag!r} not whitelisted")


@dataclass(frozen=True)
class NoiseModel:
    """Stand-in for nondeterministic execution: i.i.d. gaussian z added after
    each update, W' = W - eta*g + z. sigma is the absolute per-coordinate std."""

    kind: str = "none"
    sigma: float = 0.0

    def validate(self):
        if self.kind not in ("none", "gaussian"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError(f"sigma must be >= 0 and finite, got {self.sigma}")
        if self.kind == "none" and self.sigma != 0.0:
            raise ValueError("noise kind 'none' requires sigma == 0")

    @property
    def active(self):
        return self.kind == "gaussian" and self.sigma > 0.0


NO_NOISE = NoiseModel()


@dataclass
class CallCounter:
    """Counts gradient evaluations; shared by trainer, verifier and attacks so
    cost claims are measured, not asserted."""

    grad_evals: int = 0

    def add(self, n=1):
        self.grad_evals += int(n)


def sgd_step(weights, batch, hyper, noise=NO_NOISE, rng=None, *, eta=None, counter=None):
    """One plain SGD update on one batch: W' = W - eta * grad + z.

    `eta` overrides hyper.eta when a per-step schedule is in play. The noise
    draw consumes `rng`; passing the same generator state reproduces the step
    bit for bit.
    """
    X, y = batch
    _, g = loss_and_grad(weights.arch, weights.values, X, y)
    if counter is not None:
        counter.add(1)
    step_eta = hyper.eta if eta is None else eta
    vals = weights.values - step_eta * g
    if noise.active:
        if rng is None:
            raise ValueError("gaussian noise requires an rng")
        vals = vals + noise.sigma * rng.standard_normal(vals.size)
    return WeightVector(weights.arch, vals)


@dataclass
class TrainResult:
    weights: WeightVector  # final state
    steps: int
    losses: np.ndarray = field(default=None, repr=False)  # per-step batch loss


def run_sgd(
    dataset,
    arch,
    hyper,
    epochs,
    noise=NO_NOISE,
    *,
    init=None,
    eta_schedule=None,
    noise_seed=None,
    counter=None,
    on_step=None,
    record_losses=False,
):
    """Run `epochs` epochs of minibatch SGD and return the final weights.

    Each epoch draws a fresh seeded permutation partition of the dataset.
    `on_step(t, weights_before, batch_indices, eta_t)` fires before every
    update, which is all a transcript builder needs. `noise_seed` defaults to
    hyper.seed; passing a different one redraws only the noise stream.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    noise.validate()
    if init is None:
        w = init_weights(arch, hyper.init_strategy, hyper.seed)
    else:
        if init.arch != arch:
            raise ValueError("init weights built for a different architecture")
        w = init.copy()
    nrng = noise_stream_rng(hyper.seed if noise_seed is None else noise_seed)
    losses = [] if record_losses else None
    t = 0
    for e in range(epochs):
        batches = get_batches(dataset, hyper.batch_size, batch_stream_seed(hyper.seed, e))
        for idx in batches:
            eta_t = hyper.eta if eta_schedule is None else float(eta_schedule[t])
            if on_step is not None:
                on_step(t, w, idx, eta_t)
            X, y = dataset.batch(idx)
            if record_losses:
                loss, g = loss_and_grad(arch, w.values, X, y)
                losses.append(loss)
            else:
                _, g = loss_and_grad(arch, w.values, X, y)
            if counter is not None:
                counter.add(1)
            vals = w.values - eta_t * g
            if noise.active:
                vals = vals + noise.sigma * nrng.standard_normal(vals.size)
            w = WeightVector(arch, vals)
            t += 1
    return TrainResult(weights=w, steps=t, losses=None if losses is None else np.asarray(losses))
