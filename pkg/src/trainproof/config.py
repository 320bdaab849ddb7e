"""Run configuration: one JSON document describing data, model, training,
and verification, with strict key checking and a couple of "auto" values
resolved at build time.

noise_sigma "auto" scales the per-step noise to the starting weights
(AUTO_NOISE_REL times their RMS), which keeps the reproducibility behavior
of a run roughly independent of architecture width. delta "auto" defers to
the verifier's noise-level formula.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import load_csv_dataset, make_synthetic_dataset
from .model import ModelArch, init_weights
from .training import Hyperparams, NoiseModel
from .verify import VerificationConfig

# Relative scale of "auto" update noise: sigma = AUTO_NOISE_REL * rms(W_0).
# Large enough that full-length re-runs with fresh draws decorrelate (end up
# in different basins), small enough that single steps reproduce almost
# exactly. Calibrated on the default two-moons task.
AUTO_NOISE_REL = 4e-2


@dataclass
class DataConfig:
    kind: str = "two_moons"  # gaussian_blobs | two_moons | csv
    n: int = 2000
    dim: int = 2
    classes: int = 2
    seed: int = 7
    separation: float = 5.0  # gaussian_blobs only
    noise: float = 0.2
    csv_path: str = None
    label_kind: str = "int"


@dataclass
class ModelConfig:
    hidden: tuple = (128, 64)
    activation: str = "relu"
    loss: str = "cross_entropy_softmax"


@dataclass
class TrainConfig:
    eta: float = 3.0
    batch_size: int = 100
    epochs: int = 20
    checkpoint_interval: int = 5
    init_strategy: str = "xavier_uniform"
    seed: int = 0
    optimizer: str = "sgd"
    noise_kind: str = "gaussian"
    noise_sigma: object = "auto"  # float or "auto"
    noise_seed: int = None
    checkpoint_dtype: str = "f64"


@dataclass
class VerifyConfig:
    query_budget: int = 2
    delta: object = "auto"  # float or "auto"
    alpha: float = 0.01
    bonferroni: bool = True
    magnitude_metric: str = "l2"
    distance_metric: str = "l2"
    selection: str = "top_q"
    selection_seed: int = 0
    extra_random: int = 0
    safety_factor: float = 10.0
    max_noise_rel: float = 0.08


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)


_SECTIONS = {"data": DataConfig, "model": ModelConfig, "train": TrainConfig, "verify": VerifyConfig}


def config_from_dict(doc):
    """Build a RunConfig, rejecting any key the schema does not know."""
    if not isinstance(doc, dict):
        raise ValueError("config document must be a JSON object")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config section: {sorted(unknown)[0]}")
    built = {}
    for name, cls in _SECTIONS.items():
        section = doc.get(name, {})
        if not isinstance(section, dict):
            raise ValueError(f"config section {name!r} must be an object")
        known = {f.name for f in dataclasses.fields(cls)}
        for key in section:
            if key not in known:
                raise ValueError(f"unknown config key: {name}.{key}")
        kwargs = dict(section)
        if "hidden" in kwargs and kwargs["hidden"] is not None:
            kwargs["hidden"] = tuple(kwargs["hidden"])
        built[name] = cls(**kwargs)
    return RunConfig(**built)


def config_to_dict(cfg):
    doc = {}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(cfg, name))
        if "hidden" in section:
            section["hidden"] = list(section["hidden"])
        doc[name] = section
    return doc


def load_config(path):
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def save_config(cfg, path):
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2)
        fh.write("\n")


def build_dataset(cfg):
    d = cfg.data
    if d.kind == "csv":
        if not d.csv_path:
            raise ValueError("data.kind csv needs data.csv_path")
        return load_csv_dataset(d.csv_path, label_kind=d.label_kind)
    return make_synthetic_dataset(
        d.kind, d.n, d.dim, classes=d.classes, seed=d.seed, separation=d.separation, noise=d.noise
    )


def build_arch(cfg, dataset):
    out_dim = 1 if cfg.model.loss == "squared_error" else cfg.data.classes
    dims = (dataset.dim,) + tuple(cfg.model.hidden) + (out_dim,)
    acts = (cfg.model.activation,) * len(cfg.model.hidden)
    return ModelArch(dims, acts, cfg.model.loss)


def build_hyper(cfg):
    t = cfg.train
    return Hyperparams(
        eta=t.eta,
        batch_size=t.batch_size,
        init_strategy=t.init_strategy,
        loss_tag=cfg.model.loss,
        optimizer_tag=t.optimizer,
        seed=t.seed,
    )


def auto_sigma(arch, init_strategy, seed):
    """Noise scale tied to the run's own starting weights."""
    w = init_weights(arch, init_strategy, seed).values
    return AUTO_NOISE_REL * math.sqrt(float(np.mean(w * w)))


def build_noise(cfg, arch):
    t = cfg.train
    if t.noise_kind == "none":
        return NoiseModel()
    sigma = t.noise_sigma
    if sigma == "auto":
        sigma = auto_sigma(arch, t.init_strategy, t.seed)
    return NoiseModel(kind=t.noise_kind, sigma=float(sigma))


def build_verifier_config(cfg):
    v = cfg.verify
    delta = None if v.delta == "auto" else float(v.delta)
    return VerificationConfig(
        query_budget=v.query_budget,
        delta=delta,
        alpha=v.alpha,
        bonferroni=v.bonferroni,
        magnitude_metric=v.magnitude_metric,
        distance_metric=v.distance_metric,
        selection=v.selection,
        selection_seed=v.selection_seed,
        extra_random=v.extra_random,
        safety_factor=v.safety_factor,
        max_noise_rel=v.max_noise_rel,
    )
