"""Fully connected networks as flat float64 weight vectors.

The whole package treats a model as (architecture, flat parameter vector).
Keeping parameters flat makes checkpoint hashing, serialization and
weight-space distances trivial; layers are views into the flat vector.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")
LOSSES = ("cross_entropy_softmax", "squared_error")
INIT_STRATEGIES = (
    "xavier_uniform",
    "xavier_normal",
    "kaiming_uniform",
    "kaiming_normal",
)

# floor for log(prob) so a saturated softmax yields a large finite loss
_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class ModelArch:
    """Layer sizes, one activation per hidden layer, and the loss the model trains under."""

    layer_dims: tuple
    activations: tuple = ()
    loss: str = "cross_entropy_softmax"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        acts = self.activations
        if isinstance(acts, str):
            acts = (acts,) * max(0, len(dims) - 2)
        acts = tuple(acts)
        if not acts and len(dims) > 2:
            acts = ("relu",) * (len(dims) - 2)
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "activations", acts)
        self.validate()

    def validate(self):
        if len(self.layer_dims) < 2:
            raise ValueError("need at least an input and an output layer")
        if any(d < 1 for d in self.layer_dims):
            raise ValueError(f"layer dims must be >= 1, got {self.layer_dims}")
        if len(self.activations) != len(self.layer_dims) - 2:
            raise ValueError(
                f"need {len(self.layer_dims) - 2} hidden activations, got {len(self.activations)}"
            )
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.loss == "squared_error" and self.layer_dims[-1] != 1:
            raise ValueError("squared_error expects a single output unit")

    @property
    def n_layers(self):
        return len(self.layer_dims) - 1

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]

    @property
    def n_params(self):
        return sum(
            (din + 1) * dout
            for din, dout in zip(self.layer_dims[:-1], self.layer_dims[1:])
        )


@dataclass(frozen=True)
class LayerSlot:
    """Where one layer's weight matrix and bias live inside the flat vector."""

    weights: slice
    bias: slice
    shape: tuple  # (fan_in, fan_out)


@functools.lru_cache(maxsize=None)
def weight_layout(arch):
    """Slices of the flat parameter vector, one LayerSlot per layer."""
    slots = []
    off = 0
    for din, dout in zip(arch.layer_dims[:-1], arch.layer_dims[1:]):
        w = slice(off, off + din * dout)
        off += din * dout
        b = slice(off, off + dout)
        off += dout
        slots.append(LayerSlot(w, b, (din, dout)))
    return tuple(slots)


@dataclass
class WeightVector:
    """A model's parameters: one flat, finite float64 array."""

    arch: ModelArch
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).ravel()
        if vals.size != self.arch.n_params:
            raise ValueError(
                f"expected {self.arch.n_params} parameters, got {vals.size}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("weight values must be finite")
        self.values = vals

    def layer(self, i):
        """(weight matrix view, bias view) of layer i."""
        slot = weight_layout(self.arch)[i]
        return self.values[slot.weights].reshape(slot.shape), self.values[slot.bias]

    def copy(self):
        return WeightVector(self.arch, self.values.copy())


def init_weights(arch, strategy, seed):
    """Draw fresh weights for `arch` under a whitelisted strategy; biases start at zero.

    Bounds/scales:
      xavier_uniform   U(-a, a),  a = sqrt(6 / (fan_in + fan_out))
      xavier_normal    N(0, s^2), s = sqrt(2 / (fan_in + fan_out))
      kaiming_uniform  U(-a, a),  a = sqrt(6 / fan_in)
      kaiming_normal   N(0, s^2), s = sqrt(2 / fan_in)

    Deterministic: same (arch, strategy, seed) gives bit-identical values.
    """
    if strategy not in INIT_STRATEGIES:
        raise ValueError(f"unknown init strategy {strategy!r}")
    rng = np.random.default_rng(np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF))
    values = np.zeros(arch.n_params, dtype=np.float64)
    for i, slot in enumerate(weight_layout(arch)):
        fan_in, fan_out = slot.shape
        n = fan_in * fan_out
        if strategy == "xavier_uniform":
            a = np.sqrt(6.0 / (fan_in + fan_out))
            draw = rng.uniform(-a, a, size=n)
        elif strategy == "xavier_normal":
            draw = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=n)
        elif strategy == "kaiming_uniform":
            a = np.sqrt(6.0 / fan_in)
            draw = rng.uniform(-a, a, size=n)
        else:  # kaiming_normal
            draw = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=n)
        values[slot.weights] = draw
        # bias slice stays zero
    return WeightVector(arch, values)


def init_scale(strategy, fan_in, fan_out):
    """Closed-form scale of one layer's init: (kind, param) with kind in {uniform, normal}.

    uniform -> param is the half-width a; normal -> param is the std.
    """
    if strategy == "xavier_uniform":
        return "uniform", float(np.sqrt(6.0 / (fan_in + fan_out)))
    if strategy == "xavier_normal":
        return "normal", float(np.sqrt(2.0 / (fan_in + fan_out)))
    if strategy == "kaiming_uniform":
        return "uniform", float(np.sqrt(6.0 / fan_in))
    if strategy == "kaiming_normal":
        return "normal", float(np.sqrt(2.0 / fan_in))
    raise ValueError(f"unknown init strategy {strategy!r}")


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def forward(arch, values, X):
    """Logits for a batch X of shape (m, in_dim)."""
    X = np.asarray(X, dtype=np.float64)
    a = X
    slots = weight_layout(arch)
    for i, slot in enumerate(slots):
        W = values[slot.weights].reshape(slot.shape)
        b = values[slot.bias]
        z = a @ W + b
        a = z if i == len(slots) - 1 else _activate(arch.activations[i], z)
    return a


def _softmax(logits):
    # stable softmax
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(arch, values, X, Y):
    """Batch-mean loss and its flat gradient.

    cross_entropy_softmax: Y holds integer class ids, loss = -mean log p_y.
    squared_error: Y holds real targets, per-sample loss = (pred - y)^2,
    averaged over the batch (single output unit).
    """
    X = np.asarray(X, dtype=np.float64)
    m = X.shape[0]
    slots = weight_layout(arch)

    # forward with caches
    pre = []  # z per layer
    acts = [X]  # post-activation inputs per layer
    a = X
    for i, slot in enumerate(slots):
        W = values[slot.weights].reshape(slot.shape)
        z = a @ W + values[slot.bias]
        pre.append(z)
        a = z if i == len(slots) - 1 else _activate(arch.activations[i], z)
        acts.append(a)
    logits = pre[-1]

    if arch.loss == "cross_entropy_softmax":
        y = np.asarray(Y)
        probs = _softmax(logits)
        picked = probs[np.arange(m), y.astype(np.int64)]
        loss = float(-np.mean(np.log(np.maximum(picked, _LOG_FLOOR))))
        dz = probs
        dz[np.arange(m), y.astype(np.int64)] -= 1.0
        dz /= m
    else:  # squared_error
        y = np.asarray(Y, dtype=np.float64).reshape(m, 1)
        err = logits - y
        loss = float(np.mean(np.sum(err**2, axis=1)))
        dz = 2.0 * err / m

    grad = np.zeros_like(values)
    for i in range(len(slots) - 1, -1, -1):
        slot = slots[i]
        a_in = acts[i]
        grad[slot.weights] = (a_in.T @ dz).ravel()
        grad[slot.bias] = dz.sum(axis=0)
        if i > 0:
            W = values[slot.weights].reshape(slot.shape)
            da = dz @ W.T
            act = arch.activations[i - 1]
            if act == "relu":
                dz = da * (pre[i - 1] > 0.0)  # relu'
            elif act == "tanh":
                dz = da * (1.0 - np.tanh(pre[i - 1]) ** 2)
            else:
                dz = da
    return loss, grad


def gradient(weights, X, Y):
    """Batch-mean loss gradient as a WeightVector."""
    _, g = loss_and_grad(weights.arch, weights.values, X, Y)
    return WeightVector(weights.arch, g)


def batch_loss(arch, values, X, Y):
    loss, _ = loss_and_grad(arch, values, X, Y)
    return loss


def predict(arch, values, X):
    """Predicted class ids (cross entropy) or raw outputs (squared error)."""
    logits = forward(arch, values, X)
    if arch.loss == "cross_entropy_softmax":
        return logits.argmax(axis=1)
    return logits[:, 0]


def accuracy(arch, values, X, y):
    return float(np.mean(predict(arch, values, X) == np.asarray(y)))
