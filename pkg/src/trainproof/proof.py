"""Training transcripts: record, hash, serialize.

A transcript of a T = E*S step run holds, per step, the batch index list, a
32-byte digest of the batch content, and the step's learning rate; plus the
weight state every k-th step starting at t = 0, and the final weights in the
trailer. That is everything a verifier needs to re-execute any chosen slice
of the run against the prover's own records.

Binary format (all little-endian), extension .pol:

    magic "POL1" | version u16 | ckpt dtype u8 (0=f64 1=f32 2=f16) | reserved u8
    arch    n_dims u16, dims u32[n_dims], activations u8[n_dims-2]
    params  epochs u32, steps_per_epoch u32, checkpoint_interval u32,
            total_steps u64, batch_size u32, seed u64,
            noise kind u8 (0 none, 1 gaussian), noise sigma f64,
            loss tag str16, optimizer tag str16,
            init claim u8 (0 strategy str16 | 1 prior-proof hash 32B)
    etas    f64[total_steps]
    indices per step: varint count, then count varint indices (LEB128)
    digests 32B per step
    ckpts   count u32, then per entry: step u32, payload dtype[n_params]
    trailer final weights f64[n_params], SHA-256 of all preceding bytes (32B)

The trailing digest doubles as the transcript's identity (ledger key).
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .model import ACTIVATIONS, LOSSES, ModelArch
from .training import NO_NOISE, run_sgd

MAGIC = b"POL1"
VERSION = 1

CHECKPOINT_DTYPES = {"f64": "<f8", "f32": "<f4", "f16": "<f2"}
_DTYPE_CODES = {"f64": 0, "f32": 1, "f16": 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}
_NOISE_CODES = {"none": 0, "gaussian": 1}
_CODE_NOISE = {v: k for k, v in _NOISE_CODES.items()}


class StructuralError(ValueError):
    """The transcript's own shape contract is broken (bad file, bad fields)."""


def hash_batch(dataset, indices):
    """32-byte SHA-256 binding a batch to its exact content and order.

    Canonical serialization: prefix "TPB1", row count u64, input dim u64,
    label kind byte, then the selected input rows (f64 LE, row-major, in index
    order), the selected labels (i64/f64 LE, same order), and finally the raw
    index list (u64 LE). Reordering the indices changes the digest.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size < 1:
        raise ValueError("indices must be a nonempty 1-D list")
    if idx.min() < 0 or idx.max() >= dataset.n:
        raise ValueError("batch index out of range")
    X, y = dataset.batch(idx)
    h = hashlib.sha256()
    h.update(b"TPB1")
    h.update(np.uint64(idx.size).tobytes())
    h.update(np.uint64(dataset.dim).tobytes())
    h.update(b"i" if dataset.label_kind == "int" else b"f")
    h.update(np.ascontiguousarray(X, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(y, dtype="<i8" if dataset.label_kind == "int" else "<f8").tobytes())
    h.update(idx.astype("<u8").tobytes())
    return h.digest()


@dataclass(frozen=True, eq=False)
class ProofMeta:
    """Run metadata published with the transcript."""

    arch: ModelArch
    epochs: int
    steps_per_epoch: int
    checkpoint_interval: int
    batch_size: int
    etas: np.ndarray  # per-step learning rate, length T
    loss_tag: str
    optimizer_tag: str
    init_strategy: str = None  # exactly one of this ...
    prior_proof_hash: bytes = None  # ... and this is set
    noise_kind: str = "none"
    noise_sigma: float = 0.0
    seed: int = 0

    @property
    def total_steps(self):
        return self.epochs * self.steps_per_epoch

    def validate(self):
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise StructuralError("epochs and steps_per_epoch must be >= 1")
        if not 1 <= self.checkpoint_interval <= self.total_steps:
            raise StructuralError(
                f"checkpoint_interval must be in [1, {self.total_steps}], got {self.checkpoint_interval}"
            )
        if self.batch_size < 1:
            raise StructuralError("batch_size must be >= 1")
        etas = np.asarray(self.etas, dtype=np.float64)
        if etas.shape != (self.total_steps,):
            raise StructuralError(f"etas must have length {self.total_steps}")
        if not np.all(np.isfinite(etas)) or np.any(etas <= 0):
            raise StructuralError("per-step learning rates must be positive and finite")
        if (self.init_strategy is None) == (self.prior_proof_hash is None):
            raise StructuralError("exactly one of init_strategy / prior_proof_hash must be set")
        if self.prior_proof_hash is not None and len(self.prior_proof_hash) != 32:
            raise StructuralError("prior proof hash must be 32 bytes")
        if self.noise_kind not in _NOISE_CODES:
            raise StructuralError(f"unknown noise kind {self.noise_kind!r}")
        if not (np.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise StructuralError("noise sigma must be >= 0 and finite")
        if not self.loss_tag or not self.optimizer_tag:
            raise StructuralError("loss and optimizer tags must be nonempty")
        # NOTE: tags are deliberately NOT whitelist-checked here; deciding
        # whether declared metadata is acceptable is the verifier's job.


@dataclass(eq=False)
class TrainingProof:
    """The full transcript: per-step records, periodic checkpoints, trailer."""

    meta: ProofMeta
    checkpoints: list  # length T; entry t is an f64 array iff t % k == 0, else None
    batch_indices: list  # length T of 1-D int64 arrays
    batch_digests: list  # length T of 32-byte digests
    final_weights: np.ndarray  # f64, the trailer
    checkpoint_dtype: str = "f64"

    def validate(self):
        self.meta.validate()
        T = self.meta.total_steps
        k = self.meta.checkpoint_interval
        P = self.meta.arch.n_params
        if self.checkpoint_dtype not in CHECKPOINT_DTYPES:
            raise StructuralError(f"unknown checkpoint dtype {self.checkpoint_dtype!r}")
        if not (len(self.checkpoints) == len(self.batch_indices) == len(self.batch_digests) == T):
            raise StructuralError("per-step record lists must all have length E*S")
        dt = CHECKPOINT_DTYPES[self.checkpoint_dtype]
        for t, w in enumerate(self.checkpoints):
            if t % k == 0:
                if w is None:
                    raise StructuralError(f"missing checkpoint at step {t}")
                w = np.asarray(w)
                if w.shape != (P,):
                    raise StructuralError(f"checkpoint at step {t} has wrong size")
                if not np.all(np.isfinite(w)):
                    raise StructuralError(f"checkpoint at step {t} is not finite")
                if not np.array_equal(w, w.astype(dt).astype(np.float64)):  # lossless roundtrip

                    raise StructuralError(
                        f"checkpoint at step {t} not representable in {self.checkpoint_dtype}"
                    )
            elif w is not None:
                raise StructuralError(f"unexpected checkpoint at step {t} (k = {k})")
        for t, idx in enumerate(self.batch_indices):
            idx = np.asarray(idx)
            if idx.ndim != 1 or idx.size < 1 or idx.dtype.kind not in "iu":
                raise StructuralError(f"batch index list at step {t} must be 1-D integers")
            if idx.min() < 0:
                raise StructuralError(f"negative batch index at step {t}")
        for t, d in enumerate(self.batch_digests):
            if not isinstance(d, (bytes, bytearray)) or len(d) != 32:
                raise StructuralError(f"digest at step {t} must be 32 bytes")
        fw = np.asarray(self.final_weights)
        if fw.shape != (P,) or not np.all(np.isfinite(fw)):
            raise StructuralError("final weights missing, misshaped, or not finite")

    @property
    def checkpoint_steps(self):
        k = self.meta.checkpoint_interval
        return list(range(0, self.meta.total_steps, k))

    def checkpoint_at(self, t):
        w = self.checkpoints[t]
        if w is None:
            raise KeyError(f"no checkpoint at step {t}")
        return w

    def serialize(self):
        return serialize(self)

    def content_hash(self):
        """Hex id of the transcript (the trailer digest)."""
        return serialize(self)[-32:].hex()


def _downcast(values, dtype_name):
    dt = CHECKPOINT_DTYPES[dtype_name]
    return np.asarray(values, dtype=np.float64).astype(dt).astype(np.float64)


def create_proof(
    dataset,
    arch,
    hyper,
    *,
    epochs,
    checkpoint_interval,
    steps_per_epoch=None,
    noise=NO_NOISE,
    init=None,
    prior_proof_hash=None,
    eta_schedule=None,
    checkpoint_dtype="f64",
    noise_seed=None,
    counter=None,
):
    """Train for `epochs` epochs recording a verifiable transcript.

    Returns (proof, final_weights). Exactly E*S gradient evaluations are
    spent (one per recorded step; measurable via `counter`). A warm start
    (`init` given) must name the prior transcript it continues from; a cold
    start draws weights from hyper's whitelisted init strategy so the claim
    can later face the distribution test.
    """
    hyper.validate()
    noise.validate()
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if arch.in_dim != dataset.dim:
        raise ValueError(f"arch expects {arch.in_dim}-d inputs, dataset has {dataset.dim}")
    if hyper.loss_tag != arch.loss:
        raise ValueError("hyper.loss_tag must match arch.loss")
    if arch.loss == "cross_entropy_softmax":
        if dataset.label_kind != "int":
            raise ValueError("cross entropy needs integer class labels")
        if dataset.labels.max() >= arch.out_dim:
            raise ValueError("label id exceeds output dimension")
    else:
        if dataset.label_kind != "float":
            raise ValueError("squared error needs float targets")
    if hyper.batch_size > dataset.n:
        raise ValueError("batch_size larger than the dataset")

    S = -(-dataset.n // hyper.batch_size)  # ceil(n/m)
    if steps_per_epoch is not None and steps_per_epoch != S:
        raise ValueError(
            f"steps_per_epoch must equal ceil(n / batch_size) = {S}, got {steps_per_epoch}"
        )
    T = epochs * S
    if not 1 <= checkpoint_interval <= T:
        raise ValueError(f"checkpoint_interval must be in [1, {T}]")
    if checkpoint_dtype not in CHECKPOINT_DTYPES:
        raise ValueError(f"unknown checkpoint dtype {checkpoint_dtype!r}")
    if eta_schedule is not None:
        eta_schedule = np.asarray(eta_schedule, dtype=np.float64)
        if eta_schedule.shape != (T,):
            raise ValueError(f"eta_schedule must have length {T}")
        if not np.all(np.isfinite(eta_schedule)) or np.any(eta_schedule <= 0):
            raise ValueError("eta_schedule entries must be positive and finite")
    if init is not None and prior_proof_hash is None:
        raise ValueError("a warm start must reference the prior transcript it continues")
    if init is None and prior_proof_hash is not None:
        raise ValueError("prior_proof_hash given without warm-start weights")

    checkpoints = [None] * T
    indices = [None] * T
    digests = [None] * T
    etas = np.empty(T, dtype=np.float64)

    def on_step(t, w, idx, eta_t):
        indices[t] = np.asarray(idx, dtype=np.int64).copy()
        digests[t] = hash_batch(dataset, idx)
        etas[t] = eta_t
        if t % checkpoint_interval == 0:
            checkpoints[t] = _downcast(w.values, checkpoint_dtype)

    result = run_sgd(
        dataset,
        arch,
        hyper,
        epochs,
        noise,
        init=init,
        eta_schedule=eta_schedule,
        noise_seed=noise_seed,
        counter=counter,
        on_step=on_step,
    )

    meta = ProofMeta(
        arch=arch,
        epochs=epochs,
        steps_per_epoch=S,
        checkpoint_interval=checkpoint_interval,
        batch_size=hyper.batch_size,
        etas=etas,
        loss_tag=hyper.loss_tag,
        optimizer_tag=hyper.optimizer_tag,
        init_strategy=None if init is not None else hyper.init_strategy,
        prior_proof_hash=prior_proof_hash,
        noise_kind=noise.kind,
        noise_sigma=noise.sigma,
        seed=hyper.seed,
    )
    proof = TrainingProof(
        meta=meta,
        checkpoints=checkpoints,
        batch_indices=indices,
        batch_digests=digests,
        final_weights=result.weights.values.copy(),
        checkpoint_dtype=checkpoint_dtype,
    )
    proof.validate()
    return proof, result.weights


# ---------------------------------------------------------------------------
# varints (LEB128, unsigned)


def _encode_varints(values, out):
    for v in values:
        v = int(v)
        if v < 0:
            raise ValueError("varints are unsigned")
        while True:
            b = v & 0x7F
            v >>= 7
            if v:
                out.append(b | 0x80)
            else:
                out.append(b)
                break


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise StructuralError("truncated transcript file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return self.take(1)[0]

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def varint(self):
        shift = 0
        val = 0
        while True:
            b = self.u8()
            val |= (b & 0x7F) << shift
            if not b & 0x80:
                return val
            shift += 7
            if shift > 63:
                raise StructuralError("varint too long")

    def string(self):
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def _put_string(out, s):
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string field too long")
    out += struct.pack("<H", len(raw))
    out += raw


def serialize(proof):
    """Deterministic binary encoding; see the module docstring for the layout."""
    proof.validate()
    m = proof.meta
    arch = m.arch
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HBB", VERSION, _DTYPE_CODES[proof.checkpoint_dtype], 0)

    out += struct.pack("<H", len(arch.layer_dims))
    out += np.asarray(arch.layer_dims, dtype="<u4").tobytes()
    out += bytes(ACTIVATIONS.index(a) for a in arch.activations)
    out += struct.pack("<B", LOSSES.index(arch.loss))

    out += struct.pack(
        "<IIIQIQ",
        m.epochs,
        m.steps_per_epoch,
        m.checkpoint_interval,
        m.total_steps,
        m.batch_size,
        int(m.seed) & 0xFFFFFFFFFFFFFFFF,
    )
    out += struct.pack("<Bd", _NOISE_CODES[m.noise_kind], m.noise_sigma)
    _put_string(out, m.loss_tag)
    _put_string(out, m.optimizer_tag)
    if m.init_strategy is not None:
        out += b"\x00"
        _put_string(out, m.init_strategy)
    else:
        out += b"\x01"
        out += m.prior_proof_hash

    out += np.asarray(m.etas, dtype="<f8").tobytes()

    for idx in proof.batch_indices:
        _encode_varints([len(idx)], out)
        _encode_varints(idx, out)

    for d in proof.batch_digests:
        out += d

    steps = [t for t, w in enumerate(proof.checkpoints) if w is not None]
    out += struct.pack("<I", len(steps))
    dt = CHECKPOINT_DTYPES[proof.checkpoint_dtype]
    for t in steps:
        out += struct.pack("<I", t)
        out += np.asarray(proof.checkpoints[t]).astype(dt).tobytes()

    out += np.asarray(proof.final_weights, dtype="<f8").tobytes()
    out += hashlib.sha256(bytes(out)).digest()
    return bytes(out)


def deserialize(data):
    """Parse and structurally validate a .pol byte string."""
    if len(data) < 40:
        raise StructuralError("transcript file too short")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise StructuralError("transcript digest mismatch (file corrupted or truncated)")
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise StructuralError("bad magic; not a transcript file")
    version, dtype_code, _reserved = r.unpack("<HBB")
    if version != VERSION:
        raise StructuralError(f"unsupported transcript version {version}")
    if dtype_code not in _CODE_DTYPES:
        raise StructuralError(f"unknown checkpoint dtype code {dtype_code}")
    dtype_name = _CODE_DTYPES[dtype_code]

    (n_dims,) = r.unpack("<H")
    if n_dims < 2:
        raise StructuralError("architecture needs at least two layers")
    dims = np.frombuffer(r.take(4 * n_dims), dtype="<u4").astype(int)
    act_codes = r.take(n_dims - 2)
    try:
        acts = tuple(ACTIVATIONS[c] for c in act_codes)
    except IndexError:
        raise StructuralError("unknown activation code") from None
    (loss_code,) = r.unpack("<B")
    if loss_code >= len(LOSSES):
        raise StructuralError(f"unknown loss code {loss_code}")

    epochs, S, k, T, batch_size, seed = r.unpack("<IIIQIQ")
    noise_code, sigma = r.unpack("<Bd")
    if noise_code not in _CODE_NOISE:
        raise StructuralError(f"unknown noise code {noise_code}")
    loss_tag = r.string()
    optimizer_tag = r.string()
    init_kind = r.u8()
    if init_kind == 0:
        init_strategy, prior_hash = r.string(), None
    elif init_kind == 1:
        init_strategy, prior_hash = None, bytes(r.take(32))
    else:
        raise StructuralError(f"unknown init claim kind {init_kind}")

    if T != epochs * S:
        raise StructuralError("total_steps does not equal epochs * steps_per_epoch")
    try:
        arch = ModelArch(tuple(dims), acts, LOSSES[loss_code])
    except ValueError as exc:
        raise StructuralError(f"bad architecture block: {exc}") from None
    # arch.loss is the compute enum; meta.loss_tag is the (free-form) claim a
    # verifier holds against the whitelist
    P = arch.n_params

    etas = np.frombuffer(r.take(8 * T), dtype="<f8").copy()

    indices = []
    for _ in range(T):
        cnt = r.varint()
        if cnt < 1:
            raise StructuralError("empty batch index list")
        indices.append(np.asarray([r.varint() for _ in range(cnt)], dtype=np.int64))

    digests = [bytes(r.take(32)) for _ in range(T)]

    (n_ckpt,) = r.unpack("<I")
    dt = CHECKPOINT_DTYPES[dtype_name]
    itemsize = np.dtype(dt).itemsize
    checkpoints = [None] * T
    for _ in range(n_ckpt):
        (t,) = r.unpack("<I")
        if t >= T:
            raise StructuralError(f"checkpoint step {t} out of range")
        payload = np.frombuffer(r.take(itemsize * P), dtype=dt)
        checkpoints[t] = payload.astype(np.float64)

    final = np.frombuffer(r.take(8 * P), dtype="<f8").copy()
    r.take(32)  # the digest, already checked
    if r.pos != len(data):
        raise StructuralError("trailing bytes after transcript")

    meta = ProofMeta(
        arch=arch,
        epochs=epochs,
        steps_per_epoch=S,
        checkpoint_interval=k,
        batch_size=batch_size,
        etas=etas,
        loss_tag=loss_tag,
        optimizer_tag=optimizer_tag,
        init_strategy=init_strategy,
        prior_proof_hash=prior_hash,
        noise_kind=_CODE_NOISE[noise_code],
        noise_sigma=sigma,
        seed=seed,
    )
    proof = TrainingProof(
        meta=meta,
        checkpoints=checkpoints,
        batch_indices=indices,
        batch_digests=digests,
        final_weights=final,
        checkpoint_dtype=dtype_name,
    )
    try:
        proof.validate()
    except StructuralError:
        raise
    except ValueError as exc:
        raise StructuralError(str(exc)) from None
    return proof


def write_proof(proof, path):
    data = serialize(proof)
    with open(path, "wb") as fh:
        fh.write(data)
    return data[-32:].hex()


def read_proof(path):
    with open(path, "rb") as fh:
        return deserialize(fh.read())


# ---------------------------------------------------------------------------
# closed-form costs


def checkpoint_count(epochs, steps_per_epoch, checkpoint_interval):
    """Number of stored checkpoints: ceil(E*S / k) (steps 0, k, 2k, ... < T)."""
    _check_pos(epochs=epochs, steps_per_epoch=steps_per_epoch, checkpoint_interval=checkpoint_interval)
    return math.ceil(epochs * steps_per_epoch / checkpoint_interval)


def proof_size_bytes(epochs, steps_per_epoch, checkpoint_interval, bytes_per_checkpoint):
    """Checkpoint payload of a transcript: ceil(E*S/k) * bytes_per_checkpoint."""
    _check_pos(bytes_per_checkpoint=bytes_per_checkpoint)
    return checkpoint_count(epochs, steps_per_epoch, checkpoint_interval) * bytes_per_checkpoint


def measured_checkpoint_payload(proof):
    """Actual serialized checkpoint bytes (weights only, headers excluded)."""
    n = sum(1 for w in proof.checkpoints if w is not None)
    item = np.dtype(CHECKPOINT_DTYPES[proof.checkpoint_dtype]).itemsize
    return n * proof.meta.arch.n_params * item


def expected_transfer(dataset_size, query_budget, checkpoint_interval, steps_per_epoch, epochs):
    """Expected number of distinct data points a verifier must fetch.

    Per epoch the checked segments cover Q*k of the S steps, i.e. a Q*k/S
    chance for any given point under random batching; over E independent
    epochs: |D| * (1 - (1 - Q*k/S)^E).
    """
    _check_pos(
        dataset_size=dataset_size,
        query_budget=query_budget,
        checkpoint_interval=checkpoint_interval,
        steps_per_epoch=steps_per_epoch,
        epochs=epochs,
    )
    q, k, S = query_budget, checkpoint_interval, steps_per_epoch
    if q * k > S:
        raise ValueError(f"Q*k = {q * k} exceeds steps_per_epoch = {S}")
    return dataset_size * (1.0 - (1.0 - q * k / S) ** epochs)


def _check_pos(**kwargs):
    for name, v in kwargs.items():
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v}")
