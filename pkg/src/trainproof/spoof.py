"""Attacks that try to claim training work without honestly doing it.

Each attack builds a structurally valid transcript around a set of stolen
final weights and reports what it actually cost. They exist to be run
against the verifier: the point is that every shortcut either gets caught
by a specific check or costs at least as much as training honestly.

concat:   train fresh for a few epochs, splice in the stolen weights, and
          fine-tune. The splice shows up as one transcript update far
          larger than any real one, exactly where the ranking looks first.
inverse:  fabricate the run backwards from the stolen weights by solving
          each update equation for its predecessor. Self-consistent, but
          every inverted step costs at least one gradient evaluation and
          the recovered "initialization" no longer looks freshly drawn.
retrain:  redo the training honestly and publish the stolen weights as the
          result. With update noise on, the reproduced trajectory cannot
          land on them.
directed: add a pull term lam * (W - stolen) to the gradient so training
          drifts to the stolen weights. Declaring the true objective trips
          the metadata whitelist; lying about it breaks replay.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import get_batches
from .metrics import distance
from .model import WeightVector, init_weights, loss_and_grad
from .proof import ProofMeta, TrainingProof, _downcast, create_proof, hash_batch
from .training import NO_NOISE, batch_stream_seed, noise_stream_rng

ATTACKS = ("concat", "inverse_gradient", "retrain", "directed_regularizer")


@dataclass
class SpoofReport:
    """What an attack produced and what it spent."""

    attack: str
    proof: TrainingProof
    grad_calls: int  # gradient evaluations the attack actually made
    honest_calls: int  # what an honest run of the claimed length costs
    splice_step: int = None
    discontinuity: float = None  # size of the spliced-in jump
    max_residual: float = None  # worst per-step inversion error
    step_calls: tuple = ()  # inverse attack: gradient calls per inverted step
    recovered_init: WeightVector = None
    final_gap: float = None  # distance from the run's end to the stolen weights


def _claimed_meta(dataset, arch, hyper, epochs, checkpoint_interval, noise, *, loss_tag=None):
    S = math.ceil(dataset.n / hyper.batch_size)
    T = epochs * S
    return ProofMeta(
        arch=arch,
        epochs=epochs,
        steps_per_epoch=S,
        checkpoint_interval=checkpoint_interval,
        batch_size=hyper.batch_size,
        etas=np.full(T, hyper.eta, dtype=np.float64),
        loss_tag=arch.loss if loss_tag is None else loss_tag,
        optimizer_tag=hyper.optimizer_tag,
        init_strategy=hyper.init_strategy,
        noise_kind=noise.kind,
        noise_sigma=noise.sigma,
        seed=hyper.seed,
    )


def _recorded_attack_run(
    dataset,
    arch,
    hyper,
    epochs,
    checkpoint_interval,
    *,
    noise=NO_NOISE,
    noise_seed=None,
    splice=None,  # (epoch index, weight values) swapped in at that epoch boundary
    grad_extra=None,  # callable(values) -> addition to the data gradient
    checkpoint_dtype="f64",
):
    """Run the declared batch schedule while recording a transcript, with
    room for the dishonest twists the attacks need. Honest steps here match
    run_sgd bit for bit, so untouched segments replay cleanly.

    Returns (checkpoints, indices, digests, final values, grad calls, extras).
    """
    S = math.ceil(dataset.n / hyper.batch_size)
    T = epochs * S
    k = checkpoint_interval
    w = init_weights(arch, hyper.init_strategy, hyper.seed)
    nrng = noise_stream_rng(hyper.seed if noise_seed is None else noise_seed)
    checkpoints = [None] * T
    indices = []
    digests = []
    calls = 0
    extras = {}
    t = 0
    for e in range(epochs):
        if splice is not None and e == splice[0]:
            extras["discontinuity"] = distance("l2", splice[1], w.values)
            extras["splice_step"] = t
            w = WeightVector(arch, np.array(splice[1], dtype=np.float64))
        for idx in get_batches(dataset, hyper.batch_size, batch_stream_seed(hyper.seed, e)):
            indices.append(idx)
            digests.append(hash_batch(dataset, idx))
            if t % k == 0:
                checkpoints[t] = _downcast(w.values, checkpoint_dtype)
            X, y = dataset.batch(idx)
            _, g = loss_and_grad(arch, w.values, X, y)
            calls += 1
            if grad_extra is not None:
                g = g + grad_extra(w.values)
            vals = w.values - hyper.eta * g
            if noise.active:
                vals = vals + noise.sigma * nrng.standard_normal(vals.size)
            w = WeightVector(arch, vals)
            t += 1
    return checkpoints, indices, digests, w.values, calls, extras


def concat_spoof(
    dataset,
    arch,
    hyper,
    stolen_weights,
    *,
    epochs,
    fresh_epochs,
    checkpoint_interval,
    noise=NO_NOISE,
    noise_seed=None,
    checkpoint_dtype="f64",
):
    """Fresh prefix, stolen middle, fine-tuned suffix, one transcript.

    The first `fresh_epochs` epochs are honest training from a real init
    (so the distribution test passes). At that epoch boundary the weights
    are silently replaced by the stolen ones and training continues. Every
    step is individually honest except the splice, whose stored update is
    roughly the distance between two unrelated models.
    """
    if not 1 <= fresh_epochs < epochs:
        raise ValueError("fresh_epochs must be in [1, epochs)")
    stolen = np.asarray(stolen_weights, dtype=np.float64)
    checkpoints, indices, digests, final, calls, extras = _recorded_attack_run(
        dataset,
        arch,
        hyper,
        epochs,
        checkpoint_interval,
        noise=noise,
        noise_seed=noise_seed,
        splice=(fresh_epochs, stolen),
        checkpoint_dtype=checkpoint_dtype,
    )
    meta = _claimed_meta(dataset, arch, hyper, epochs, checkpoint_interval, noise)
    proof = TrainingProof(
        meta=meta,
        checkpoints=checkpoints,
        batch_indices=indices,
        batch_digests=digests,
        final_weights=np.asarray(final, dtype=np.float64),
        checkpoint_dtype=checkpoint_dtype,
    )
    proof.validate()
    return SpoofReport(
        attack="concat",
        proof=proof,
        grad_calls=calls,
        honest_calls=meta.total_steps,
        splice_step=extras["splice_step"],
        discontinuity=extras["discontinuity"],
        final_gap=distance("l2", final, stolen),
    )


@dataclass
class InverseStepResult:
    weights: np.ndarray  # predecessor estimate
    residual: float  # forward error of that estimate, max-norm
    grad_calls: int
    converged: bool


def invert_update(arch, after, batch, eta, *, tol=1e-12, max_iters=200, method="fixed_point", relax=0.5):
    """Solve W - eta * grad(W) = after for W.

    fixed_point iterates W <- after + eta * grad(W), which contracts when
    eta times the local gradient Lipschitz constant is below one. damped
    blends each move by `relax` to widen that range a little. Either way
    the reported residual is exact and free: for the returned iterate W,
    the forward step lands precisely residual away (max-norm) from `after`.
    """
    if method not in ("fixed_point", "damped"):
        raise ValueError(f"unknown inversion method {method!r}")
    X, y = batch
    after = np.asarray(after, dtype=np.float64)
    w = np.array(after)
    best_w, best_res = w, math.inf
    calls = 0
    for _ in range(max_iters):
        _, g = loss_and_grad(arch, w, X, y)
        calls += 1
        phi = after + eta * g
        res = float(np.max(np.abs(phi - w)))  # == forward error of w
        if res < best_res:
            best_w, best_res = np.array(w), res
        if res <= tol:
            return InverseStepResult(w, res, calls, True)
        w = phi if method == "fixed_point" else w + relax * (phi - w)
    return InverseStepResult(best_w, best_res, calls, False)


def inverse_gradient_spoof(
    dataset,
    arch,
    hyper,
    stolen_weights,
    *,
    epochs,
    checkpoint_interval,
    tol=1e-12,
    max_iters=200,
    method="fixed_point",
    relax=0.5,
    checkpoint_dtype="f64",
):
    """Fabricate a whole run backwards from the stolen weights.

    Walks the declared batch schedule in reverse, inverting one update per
    step. The resulting transcript ends exactly at the stolen weights and
    is forward-consistent to within the inversion tolerance. What it does
    not buy: the walk spends at least one gradient evaluation per claimed
    step (honest training needs exactly one), and the step-0 weights it
    reaches are not a fresh init draw, which the distribution test sees.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    S = math.ceil(dataset.n / hyper.batch_size)
    T = epochs * S
    k = checkpoint_interval
    schedule = []
    for e in range(epochs):
        schedule.extend(get_batches(dataset, hyper.batch_size, batch_stream_seed(hyper.seed, e)))
    trail = [None] * (T + 1)
    trail[T] = np.asarray(stolen_weights, dtype=np.float64)
    step_calls = [0] * T
    residuals = [0.0] * T
    for t in range(T - 1, -1, -1):
        res = invert_update(
            arch,
            trail[t + 1],
            dataset.batch(schedule[t]),
            hyper.eta,
            tol=tol,
            max_iters=max_iters,
            method=method,
            relax=relax,
        )
        trail[t] = res.weights
        step_calls[t] = res.grad_calls
        residuals[t] = res.residual
    checkpoints = [None] * T
    for t in range(0, T, k):
        checkpoints[t] = _downcast(trail[t], checkpoint_dtype)
    digests = [hash_batch(dataset, idx) for idx in schedule]
    meta = _claimed_meta(dataset, arch, hyper, epochs, checkpoint_interval, NO_NOISE)
    proof = TrainingProof(
        meta=meta,
        checkpoints=checkpoints,
        batch_indices=schedule,
        batch_digests=digests,
        final_weights=trail[T],
        checkpoint_dtype=checkpoint_dtype,
    )
    proof.validate()
    return SpoofReport(
        attack="inverse_gradient",
        proof=proof,
        grad_calls=sum(step_calls),
        honest_calls=T,
        max_residual=max(residuals),
        step_calls=tuple(step_calls),
        recovered_init=WeightVector(arch, trail[0]),
        final_gap=0.0,
    )


def retrain_spoof(
    dataset,
    arch,
    hyper,
    claimed_weights,
    *,
    epochs,
    checkpoint_interval,
    noise=NO_NOISE,
    retrain_noise_seed=1,
    checkpoint_dtype="f64",
):
    """Train honestly, then publish someone else's weights as the result.

    The transcript itself is perfectly valid, so every internal check
    passes. The lie only surfaces when the verifier compares the published
    weights against the transcript's trailer. With update noise on, no
    retrained trajectory reproduces the claimed endpoint; with noise off
    and identical seeds this degenerates into honest recomputation, and
    then the full training cost has been paid anyway.
    """
    claimed = np.asarray(claimed_weights, dtype=np.float64)
    proof, final = create_proof(
        dataset,
        arch,
        hyper,
        epochs=epochs,
        checkpoint_interval=checkpoint_interval,
        noise=noise,
        noise_seed=retrain_noise_seed,
        checkpoint_dtype=checkpoint_dtype,
    )
    return SpoofReport(
        attack="retrain",
        proof=proof,
        grad_calls=proof.meta.total_steps,
        honest_calls=proof.meta.total_steps,
        final_gap=distance("l2", final.values, claimed),
    )


def directed_loss_and_grad(arch, values, X, y, target, lam):
    """Training objective plus a pull toward `target`.

    The added term lam/2 * ||W - target||^2 never touches the data, which
    is the tell: its finite difference against any input perturbation is
    identically zero.
    """
    loss, g = loss_and_grad(arch, values, X, y)
    gap = values - target
    return loss + 0.5 * lam * float(gap @ gap), g + lam * gap


def directed_regularizer_spoof(
    dataset,
    arch,
    hyper,
    stolen_weights,
    *,
    epochs,
    checkpoint_interval,
    lam=1.0,
    declare="honest",
    noise=NO_NOISE,
    noise_seed=None,
    checkpoint_dtype="f64",
):
    """Steer training into the stolen weights with a quadratic pull.

    declare="honest" records the ordinary loss tag while the gradient
    actually included the pull, so replayed segments drift away from the
    stored ones. declare="custom_tag" admits the modified objective, which
    the metadata whitelist rejects outright.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if declare not in ("honest", "custom_tag"):
        raise ValueError("declare must be 'honest' or 'custom_tag'")
    target = np.asarray(stolen_weights, dtype=np.float64)
    checkpoints, indices, digests, final, calls, _ = _recorded_attack_run(
        dataset,
        arch,
        hyper,
        epochs,
        checkpoint_interval,
        noise=noise,
        noise_seed=noise_seed,
        grad_extra=lambda vals: lam * (vals - target),
        checkpoint_dtype=checkpoint_dtype,
    )
    loss_tag = arch.loss if declare == "honest" else arch.loss + "+directed_pull"
    meta = _claimed_meta(
        dataset, arch, hyper, epochs, checkpoint_interval, noise, loss_tag=loss_tag
    )
    proof = TrainingProof(
        meta=meta,
        checkpoints=checkpoints,
        batch_indices=indices,
        batch_digests=digests,
        final_weights=np.asarray(final, dtype=np.float64),
        checkpoint_dtype=checkpoint_dtype,
    )
    proof.validate()
    return SpoofReport(
        attack="directed_regularizer",
        proof=proof,
        grad_calls=calls,
        honest_calls=meta.total_steps,
        final_gap=distance("l2", final, target),
    )
