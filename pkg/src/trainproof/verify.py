"""Checking a training transcript by selectively re-executing its updates.

The verifier never repeats the whole run. It splits the transcript into
checkpoint-to-checkpoint segments, ranks each epoch's segments by how far
the stored weights moved, and replays only the top few from their stored
starting point. A replayed endpoint farther than `delta` from the stored
one, a batch whose content does not match its recorded digest, starting
weights that fail the init distribution test, or metadata outside the
agreed whitelist each produce a distinct failure reason.

Replay is always noiseless. An honest prover who trained with update noise
still passes because `delta` is derived from the noise level the transcript
declares: sigma * sqrt(k * P) of accumulated per-step noise, times a safety
factor for amplification through the update maps. The declared sigma is
capped against the starting weights' scale (which the init test certifies),
so a prover cannot buy a bigger acceptance radius by declaring more noise
than the training could plausibly carry.
"""
from __future__ import annotations

import json
import math
import os
import time
from collections import namedtuple
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .ksinit import check_initialization
from .metrics import METRIC_NAMES, distance
from .model import INIT_STRATEGIES, LOSSES, WeightVector, loss_and_grad
from .proof import (
    CHECKPOINT_DTYPES,
    StructuralError,
    _downcast,
    create_proof,
    deserialize,
    hash_batch,
)
from .sealing import SignatureError, unseal
from .training import OPTIMIZERS

FAIL_REASONS = (
    "structural",
    "metadata_not_whitelisted",
    "init_ks_fail",
    "init_proof_missing",
    "noise_exceeds_policy",
    "signature_mismatch",
    "segment_distance_exceeded",
)

_NOISE_KINDS = ("none", "gaussian")
_SELECTION_MODES = ("top_q", "random")

Segment = namedtuple("Segment", ["start", "end", "epoch"])


@dataclass(frozen=True)
class VerificationConfig:
    query_budget: int = 2  # segments re-executed per epoch
    delta: float = None  # None -> derive from the declared noise level
    alpha: float = 0.01
    bonferroni: bool = True
    magnitude_metric: str = "l2"  # ranks segments from stored endpoints
    distance_metric: str = "l2"  # accepts/rejects the replayed endpoint
    selection: str = "top_q"
    selection_seed: int = 0
    extra_random: int = 0  # random extra segments on top of the ranked picks
    safety_factor: float = 10.0  # headroom for noise amplified through the steps
    max_noise_rel: float = 0.08  # declared sigma cap, relative to starting-weight rms
    delta_floor: float = None  # None -> machine-epsilon floor for the dtype

    def validate(self):
        if self.query_budget < 1:
            raise ValueError("query_budget must be >= 1")
        if self.delta is not None and (math.isnan(self.delta) or self.delta < 0):
            raise ValueError("delta must be >= 0")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        for name in (self.magnitude_metric, self.distance_metric):
            if name not in METRIC_NAMES:
                raise ValueError(f"unknown metric {name!r}")
        if self.selection not in _SELECTION_MODES:
            raise ValueError(f"selection must be one of {_SELECTION_MODES}")
        if self.extra_random < 0:
            raise ValueError("extra_random must be >= 0")
        if not self.safety_factor > 0:
            raise ValueError("safety_factor must be positive")
        if not self.max_noise_rel > 0:
            raise ValueError("max_noise_rel must be positive")
        if self.delta_floor is not None and not self.delta_floor >= 0:
            raise ValueError("delta_floor must be >= 0")


@dataclass
class SegmentReport:
    start: int
    end: int
    epoch: int
    magnitude: float
    selected_by: str  # "top", "random", "tail"
    digest_ok: bool = None
    replay_distance: float = None


@dataclass
class VerificationResult:
    ok: bool
    fail_reason: str = None
    detail: str = None
    delta: float = None
    noise_allowance: float = None  # sigma * sqrt(k * P), before the safety factor
    segments_checked: tuple = ()
    failed_segment: SegmentReport = None
    init_check: object = None
    recomputed_steps: int = 0
    prior_recomputed_steps: int = 0

    def summary(self):
        if self.ok:
            return f"PASS (delta={self.delta:.3g}, replayed {self.recomputed_steps} steps)"
        return f"FAIL {self.fail_reason}: {self.detail}"


def proof_segments(proof):
    """All checkpoint-to-checkpoint segments, last one possibly partial."""
    T = proof.meta.total_steps
    k = proof.meta.checkpoint_interval
    S = proof.meta.steps_per_epoch
    return [Segment(c, min(c + k, T), c // S) for c in range(0, T, k)]


def _stored_boundary(proof, step):
    if step == proof.meta.total_steps:
        return np.asarray(proof.final_weights, dtype=np.float64)
    return np.asarray(proof.checkpoint_at(step), dtype=np.float64)


def segment_magnitude(proof, seg, metric="l2"):
    return distance(metric, _stored_boundary(proof, seg.end), _stored_boundary(proof, seg.start))


def replay_segment(proof, dataset, seg):
    """Re-run the segment's steps, noiseless, from its stored start.

    Returns (endpoint weights, gradient evaluations spent).
    """
    arch = proof.meta.arch
    etas = np.asarray(proof.meta.etas, dtype=np.float64)
    w = np.array(_stored_boundary(proof, seg.start), dtype=np.float64)
    for t in range(seg.start, seg.end):
        X, y = dataset.batch(proof.batch_indices[t])
        _, g = loss_and_grad(arch, w, X, y)
        w = w - etas[t] * g
    return w, seg.end - seg.start


def plan_checks(proof, config):
    """Decide which segments get re-executed, epoch by epoch.

    Returns a list of (epoch, [(segment, magnitude, selected_by), ...]) in
    the order they will be checked. A partial tail segment (run length not
    a multiple of the checkpoint interval) is always appended; a full-length
    tail competes in the ranking like any other segment.
    """
    segs = proof_segments(proof)
    k = proof.meta.checkpoint_interval
    mags = {s: segment_magnitude(proof, s, config.magnitude_metric) for s in segs}
    tail = segs[-1] if (segs[-1].end - segs[-1].start) < k else None
    by_epoch = {}
    for s in segs:
        by_epoch.setdefault(s.epoch, []).append(s)
    rng = None
    if config.selection == "random" or config.extra_random:
        rng = np.random.default_rng(config.selection_seed)
    plan = []
    for epoch in sorted(by_epoch):
        group = by_epoch[epoch]
        ranked = sorted(group, key=lambda s: (-mags[s], s.start))
        if config.selection == "top_q":
            chosen = [(s, "top") for s in ranked[: config.query_budget]]
        else:
            take = min(config.query_budget, len(group))
            picks = rng.choice(len(group), size=take, replace=False)
            chosen = [(group[i], "random") for i in sorted(picks)]
        if config.extra_random:
            pool = [s for s in ranked if s not in {c for c, _ in chosen}]
            take = min(config.extra_random, len(pool))
            if take:
                picks = rng.choice(len(pool), size=take, replace=False)
                chosen.extend((pool[i], "random") for i in sorted(picks))
        if tail is not None and tail.epoch == epoch and tail not in {c for c, _ in chosen}:
            chosen.append((tail, "tail"))
        plan.append((epoch, [(s, mags[s], why) for s, why in chosen]))
    return plan


def _dtype_floor(proof):
    eps = np.finfo(CHECKPOINT_DTYPES[proof.checkpoint_dtype]).eps
    w = np.asarray(proof.final_weights, dtype=np.float64)
    rms = math.sqrt(float(np.mean(w * w)))
    return 64.0 * eps * math.sqrt(w.size) * (1.0 + rms)


def noise_allowance(proof):
    """Accumulated per-step noise over one full segment: sigma * sqrt(k * P).

    A Gaussian draw on P weights has l2 norm concentrated at sigma * sqrt(P),
    and k independent draws add in quadrature. This is the distance a
    noiseless replay drifts from the recorded endpoint before any
    amplification through the gradient maps.
    """
    k = proof.meta.checkpoint_interval
    P = proof.meta.arch.n_params
    return proof.meta.noise_sigma * math.sqrt(k * P)


def calibrate_delta(proof, config=None):
    """Acceptance radius from the noise level the transcript declares.

    A transcript that declares no update noise replays bit for bit, so it
    is held to a machine-epsilon floor. With noise declared, delta is
    safety_factor * noise_allowance(proof), floored the same way. The
    radius is never estimated from the transcript's own replay behaviour:
    a fabricated run whose segments all carry the same systematic error
    would calibrate that error into delta and hide itself.
    """
    config = config or VerificationConfig()
    floor = config.delta_floor if config.delta_floor is not None else _dtype_floor(proof)
    if proof.meta.noise_kind == "none":
        return floor
    return max(config.safety_factor * noise_allowance(proof), floor)


def _noise_policy_problem(proof, config):
    """Declared sigma beyond what the starting-weight scale supports, or None.

    Only guards the derived radius: an explicit delta is the verifier's own
    policy. The rms anchor is trustworthy because the starting weights have
    already passed the init distribution test (fresh run) or been matched
    against a verified prior transcript (warm start), so a prover cannot
    inflate it.
    """
    if config.delta is not None or proof.meta.noise_kind == "none":
        return None
    w0 = np.asarray(proof.checkpoint_at(0), dtype=np.float64)
    rms = math.sqrt(float(np.mean(w0 * w0)))
    cap = config.max_noise_rel * rms
    if proof.meta.noise_sigma > cap:
        return (
            f"declared noise sigma {proof.meta.noise_sigma:.3g} exceeds "
            f"{config.max_noise_rel:g} * starting-weight rms = {cap:.3g}"
        )
    return None


def _whitelist_problem(meta):
    if meta.loss_tag not in LOSSES:
        return f"loss tag {meta.loss_tag!r} is not on the agreed list"
    if meta.loss_tag != meta.arch.loss:
        return f"loss tag {meta.loss_tag!r} does not match the architecture's loss {meta.arch.loss!r}"
    if meta.optimizer_tag not in OPTIMIZERS:
        return f"optimizer tag {meta.optimizer_tag!r} is not on the agreed list"
    if meta.init_strategy is not None and meta.init_strategy not in INIT_STRATEGIES:
        return f"init strategy {meta.init_strategy!r} is not on the agreed list"
    if meta.noise_kind not in _NOISE_KINDS:
        return f"noise kind {meta.noise_kind!r} is not on the agreed list"
    return None


def _check_prior(proof, prior, ledger):
    """Returns a failure detail string, or None when the warm start links up."""
    claimed = proof.meta.prior_proof_hash.hex()
    if prior is None and ledger is None:
        return "transcript claims a warm start but no prior transcript or ledger was supplied"
    if ledger is not None:
        entry = ledger.get(claimed)
        if entry is None:
            return f"prior transcript {claimed[:16]} not found in ledger"
        if not entry["ok"]:
            return f"prior transcript {claimed[:16]} failed verification ({entry['fail_reason']})"
    if prior is not None:
        actual = prior.content_hash()
        if actual != claimed:
            return f"supplied prior transcript hashes to {actual[:16]}, claim says {claimed[:16]}"
        linked = _downcast(prior.final_weights, proof.checkpoint_dtype)
        if linked.shape != proof.checkpoint_at(0).shape or not np.array_equal(
            linked, proof.checkpoint_at(0)
        ):
            return "starting weights do not continue the prior transcript's final weights"
    return None


def verify_transcript(proof, dataset, config=None, *, prior=None, ledger=None, claimed_weights=None):
    """Run the full acceptance procedure on one transcript.

    prior: the TrainingProof a warm start claims to continue (if any).
    ledger: a ProofLedger consulted for the prior's verdict.
    claimed_weights: the weights the prover publishes as the run's product;
    when given, they must sit within delta of the transcript's trailer,
    which is what catches a retrained substitute.
    """
    config = config or VerificationConfig()
    config.validate()

    def fail(reason, detail, **kw):
        return VerificationResult(ok=False, fail_reason=reason, detail=detail, **kw)

    try:
        proof.validate()
    except StructuralError as e:
        return fail("structural", str(e))
    if not isinstance(dataset, Dataset):
        raise TypeError("dataset must be a Dataset")
    n = dataset.n
    for t, idx in enumerate(proof.batch_indices):
        if np.asarray(idx).max() >= n:
            return fail("structural", f"step {t} references example {int(np.asarray(idx).max())} beyond dataset size {n}")
    if proof.meta.arch.in_dim != dataset.dim:
        return fail("structural", "architecture input width does not match the dataset")

    problem = _whitelist_problem(proof.meta)
    if problem is not None:
        return fail("metadata_not_whitelisted", problem)

    init_check = None
    if proof.meta.init_strategy is not None:
        start = WeightVector(proof.meta.arch, proof.checkpoint_at(0))
        init_check = check_initialization(
            start, proof.meta.init_strategy, alpha=config.alpha, bonferroni=config.bonferroni
        )
        if not init_check.passed:
            worst = init_check.layers[init_check.first_fail_layer]
            return fail(
                "init_ks_fail",
                f"layer {worst.layer} KS p-value {worst.pvalue:.3g} below "
                f"{init_check.per_layer_alpha:.3g} for claimed {proof.meta.init_strategy}",
                init_check=init_check,
            )
    else:
        detail = _check_prior(proof, prior, ledger)
        if detail is not None:
            return fail("init_proof_missing", detail)

    problem = _noise_policy_problem(proof, config)
    if problem is not None:
        return fail("noise_exceeds_policy", problem, init_check=init_check)

    allowance = noise_allowance(proof) if proof.meta.noise_kind != "none" else 0.0
    delta = config.delta if config.delta is not None else calibrate_delta(proof, config)

    if claimed_weights is not None:
        claimed = claimed_weights.values if isinstance(claimed_weights, WeightVector) else claimed_weights
        gap = distance(config.distance_metric, np.asarray(claimed, dtype=np.float64), proof.final_weights)
        if gap > delta:
            return fail(
                "segment_distance_exceeded",
                f"published weights sit {gap:.3g} from the transcript's final weights (delta {delta:.3g})",
                delta=delta,
                noise_allowance=allowance,
                init_check=init_check,
            )

    reports = []
    recomputed = 0
    for _, picks in plan_checks(proof, config):
        for seg, mag, why in picks:
            rep = SegmentReport(seg.start, seg.end, seg.epoch, mag, why)
            reports.append(rep)
            for t in range(seg.start, seg.end):
                if hash_batch(dataset, proof.batch_indices[t]) != proof.batch_digests[t]:
                    rep.digest_ok = False
                    return fail(
                        "signature_mismatch",
                        f"batch digest at step {t} does not match the dataset content",
                        delta=delta,
                        noise_allowance=allowance,
                        segments_checked=tuple(reports),
                        failed_segment=rep,
                        init_check=init_check,
                        recomputed_steps=recomputed,
                    )
            rep.digest_ok = True
            w, nsteps = replay_segment(proof, dataset, seg)
            recomputed += nsteps
            rep.replay_distance = distance(config.distance_metric, w, _stored_boundary(proof, seg.end))
            if rep.replay_distance > delta:
                return fail(
                    "segment_distance_exceeded",
                    f"segment {seg.start}..{seg.end} replays {rep.replay_distance:.3g} "
                    f"away from its stored endpoint (delta {delta:.3g})",
                    delta=delta,
                    noise_allowance=allowance,
                    segments_checked=tuple(reports),
                    failed_segment=rep,
                    init_check=init_check,
                    recomputed_steps=recomputed,
                )
    return VerificationResult(
        ok=True,
        delta=delta,
        noise_allowance=allowance,
        segments_checked=tuple(reports),
        init_check=init_check,
        recomputed_steps=recomputed,
    )


def verify_sealed(sealed, recipient, prover_sign_pub, dataset, config=None, **kwargs):
    """Unseal, then verify. A bad envelope signature is itself a failure.

    A wrong decryption key raises DecryptionError instead of returning a
    verdict: the transcript never became visible, so there is nothing to
    judge.
    """
    try:
        plaintext = unseal(sealed, recipient, prover_sign_pub)
    except SignatureError as e:
        return VerificationResult(ok=False, fail_reason="signature_mismatch", detail=str(e))
    try:
        proof = deserialize(plaintext)
    except StructuralError as e:
        return VerificationResult(ok=False, fail_reason="structural", detail=str(e))
    return verify_transcript(proof, dataset, config, **kwargs)


def verification_cost(epochs, steps_per_epoch, query_budget, checkpoint_interval):
    """Work the verifier spends: E*Q*k replayed steps out of E*S trained."""
    for name, v in (
        ("epochs", epochs),
        ("steps_per_epoch", steps_per_epoch),
        ("query_budget", query_budget),
        ("checkpoint_interval", checkpoint_interval),
    ):
        if v < 1:
            raise ValueError(f"{name} must be >= 1")
    if query_budget * checkpoint_interval > steps_per_epoch:
        raise ValueError("query budget times checkpoint interval must not exceed steps per epoch")
    steps = epochs * query_budget * checkpoint_interval
    total = epochs * steps_per_epoch
    return {"replayed_steps": steps, "trained_steps": total, "ratio": steps / total}


class ProofLedger:
    """Append-only record of verdicts, keyed by transcript content hash.

    Re-recording the same verdict is a no-op; recording a different verdict
    for a known hash is refused, entries never change.
    """

    def __init__(self, path=None):
        self.path = path
        self._entries = {}
        if path is not None and os.path.exists(path):
            with open(path) as fh:
                doc = json.load(fh)
            if doc.get("kind") != "trainproof-ledger":
                raise ValueError(f"{path}: not a ledger file")
            for e in doc["entries"]:
                self._entries[e["proof_hash"]] = e

    def __len__(self):
        return len(self._entries)

    def get(self, proof_hash):
        return self._entries.get(proof_hash)

    def verified(self, proof_hash):
        e = self._entries.get(proof_hash)
        return bool(e and e["ok"])

    def record(self, proof_hash, ok, fail_reason=None, detail=None, delta=None, recomputed_steps=0):
        entry = {
            "proof_hash": proof_hash,
            "ok": bool(ok),
            "fail_reason": fail_reason,
            "detail": detail,
            "delta": delta,
            "recomputed_steps": int(recomputed_steps),
            "recorded_at": time.time(),
        }
        old = self._entries.get(proof_hash)
        if old is not None:
            if old["ok"] == entry["ok"] and old["fail_reason"] == entry["fail_reason"]:
                return old
            raise ValueError(f"ledger already holds a conflicting verdict for {proof_hash[:16]}")
        self._entries[proof_hash] = entry
        return entry

    def record_result(self, proof, result):
        return self.record(
            proof.content_hash(),
            result.ok,
            fail_reason=result.fail_reason,
            detail=result.detail,
            delta=result.delta,
            recomputed_steps=result.recomputed_steps,
        )

    def save(self, path=None):
        path = path or self.path
        if path is None:
            raise ValueError("no path given for ledger")
        entries = sorted(self._entries.values(), key=lambda e: e["recorded_at"])
        with open(path, "w") as fh:
            json.dump({"kind": "trainproof-ledger", "entries": entries}, fh, indent=2)
            fh.write("\n")
        self.path = path


def verify_chain(pairs, config=None, ledger=None):
    """Verify [(proof, dataset), ...] in order, enforcing warm-start links.

    Each transcript after the first may name its predecessor as prior; the
    previous proof object is handed along so hash and weight linkage get
    checked. Returns the list of per-transcript results.
    """
    results = []
    prev = None
    for proof, dataset in pairs:
        res = verify_transcript(proof, dataset, config, prior=prev, ledger=ledger)
        results.append(res)
        if ledger is not None:
            ledger.record_result(proof, res)
        if not res.ok:
            break
        prev = proof
    return results


def wilson_interval(successes, trials, z=1.96):
    """Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 0 <= successes <= trials:
        raise ValueError("successes must lie in [0, trials]")
    p = successes / trials
    zz = z * z
    denom = 1.0 + zz / trials
    center = (p + zz / (2.0 * trials)) / denom
    half = z * math.sqrt(p * (1.0 - p) / trials + zz / (4.0 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class ProverSetup:
    """Everything needed to produce one honest transcript for rate estimates."""

    dataset: Dataset
    arch: object
    hyper: object
    epochs: int
    checkpoint_interval: int
    noise: object = None
    checkpoint_dtype: str = "f64"


@dataclass(frozen=True)
class VsrEstimate:
    successes: int
    trials: int
    rate: float
    ci_low: float
    ci_high: float


def vsr_estimate(setups, config=None, trials=20, seed=0):
    """Monte Carlo verification success rate over freshly built transcripts.

    Each trial draws new training seeds for every setup in the list and
    counts the trial a success only if every transcript verifies. With one
    setup this estimates a single prover's pass rate; with several it
    estimates the joint rate of a chain of independent handoffs.
    """
    from .training import NO_NOISE

    if isinstance(setups, ProverSetup):
        setups = [setups]
    config = config or VerificationConfig()
    successes = 0
    for i in range(trials):
        all_ok = True
        for j, su in enumerate(setups):
            state = np.random.SeedSequence([seed, i, j]).generate_state(2, dtype=np.uint64)
            hyper = replace(su.hyper, seed=int(state[0]))
            proof, _ = create_proof(
                su.dataset,
                su.arch,
                hyper,
                epochs=su.epochs,
                checkpoint_interval=su.checkpoint_interval,
                noise=su.noise or NO_NOISE,
                checkpoint_dtype=su.checkpoint_dtype,
                noise_seed=int(state[1]),
            )
            if not verify_transcript(proof, su.dataset, config).ok:
                all_ok = False
                break
        successes += all_ok
    lo, hi = wilson_interval(successes, trials)
    return VsrEstimate(successes, trials, successes / trials, lo, hi)
