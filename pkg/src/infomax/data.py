"""Synthetic data with known information structure, and frozen-feature probes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .estimators import tail_mean
from .tensor import Tensor


# -- Gaussian pairs -------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianPairSpec:
    dim: int = 1
    corr: float = 0.5
    batch_size: int = 128

    def __post_init__(self):
        if not -1 < self.corr < 1:
            raise ValueError(f"corr must lie strictly inside (-1, 1), got {self.corr}")
        if self.dim < 1:
            raise ValueError("dim must be a positive int")

    @property
    def mutual_information(self) -> float:
        return gaussian_mi(self.corr, self.dim)


def gaussian_mi(corr: float, dim: int = 1) -> float:
    return -0.5 * dim * math.log1p(-corr * corr)


def sample_gaussian_pairs(spec: GaussianPairSpec, rng: np.random.Generator, n: int):
    x = rng.standard_normal((n, spec.dim))
    y = spec.corr * x + math.sqrt(1 - spec.corr ** 2) * rng.standard_normal((n, spec.dim))
    return x, y


def gaussian_stream(spec: GaussianPairSpec, shuffled: bool = False):
    """Sampler ``(rng, n) -> (x, y)``; ``shuffled`` pairs each x with an unrelated y."""
    def sample(rng, n):
        x, y = sample_gaussian_pairs(spec, rng, n)
        if shuffled:
            x = rng.standard_normal(x.shape)
        return x, y
    return sample


# -- toy images -------------------------------------------------------------------

@dataclass(frozen=True)
class ToyImageSpec:
    """Class template + patch-constant noise + pixel noise.

    Templates are smooth, so every quadrant carries the class. Patch noise is
    constant within each ``patch x patch`` cell and independent across cells,
    giving each local feature its own nuisance signal.
    """

    size: int = 16
    n_classes: int = 8
    patch: int = 4
    patch_noise: float = 3.0
    pixel_noise: float = 1.0
    template_seed: int = 0

    def __post_init__(self):
        if self.size % self.patch:
            raise ValueError("image size must be a multiple of the patch size")


def class_templates(spec: ToyImageSpec) -> np.ndarray:
    """(n_classes, size, size) low-frequency patterns with zero mean, unit std."""
    rng = np.random.default_rng(spec.template_seed)
    u = np.arange(spec.size) / spec.size
    yy, xx = np.meshgrid(u, u, indexing="ij")
    out = np.empty((spec.n_classes, spec.size, spec.size))
    for c in range(spec.n_classes):
        img = np.zeros_like(xx)
        for _ in range(4):
            fy, fx = rng.integers(0, 3, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            img += rng.normal() * np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
        img -= img.mean()
        out[c] = img / img.std()
    return out


def sample_toy_images(spec: ToyImageSpec, rng: np.random.Generator, n: int):
    """Returns ``(images: n x 1 x size x size float32, labels: n int64)``."""
    templates = class_templates(spec)
    labels = rng.integers(0, spec.n_classes, size=n)
    g = spec.size // spec.patch
    patches = rng.standard_normal((n, g, g)) * spec.patch_noise
    patches = np.repeat(np.repeat(patches, spec.patch, axis=1), spec.patch, axis=2)
    pixels = rng.standard_normal((n, spec.size, spec.size)) * spec.pixel_noise
    images = templates[labels] + patches + pixels
    return images[:, None].astype(np.float32), labels.astype(np.int64)


# -- probes ---------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeSpec:
    kind: str = "linear"          # linear | mlp200
    epochs: int = 50
    dropout: float = 0.1
    lr: float = 1e-2
    batch_size: int = 128
    test_fraction: float = 0.25

    def __post_init__(self):
        if self.kind not in ("linear", "mlp200"):
            raise ValueError(f"unknown probe kind {self.kind!r}")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")


def _probe_model(kind: str, d: int, n_classes: int, dropout: float, rng) -> nn.Module:
    if kind == "linear":
        return nn.Linear(d, n_classes, rng, init="glorot")
    return nn.mlp([d, 200, n_classes], rng, dropout=dropout)


def standardize(train: np.ndarray, *others: np.ndarray):
    mu = train.mean(axis=0)
    sd = train.std(axis=0) + 1e-6
    return [(a - mu) / sd for a in (train, *others)]


def fit_classifier(x: np.ndarray, y: np.ndarray, spec: ProbeSpec, rng, n_classes: int,
                   x_eval: np.ndarray | None = None, y_eval: np.ndarray | None = None):
    """Train a probe with Adam on cross-entropy; returns (model, per-epoch eval accuracies)."""
    model = _probe_model(spec.kind, x.shape[1], n_classes, spec.dropout, rng)
    opt = nn.Adam(model.parameters(), lr=spec.lr)
    xs = x.astype(np.float32)
    history = []
    for _ in range(spec.epochs):
        model.train()
        order = rng.permutation(len(xs))
        for start in range(0, len(xs), spec.batch_size):
            idx = order[start:start + spec.batch_size]
            opt.zero_grad()
            T.backward(T.softmax_cross_entropy(model(Tensor(xs[idx])), y[idx]))
            opt.step()
        if x_eval is not None:
            history.append(float(np.mean(predict_logits(model, x_eval).argmax(1) == y_eval)))
    model.eval()
    return model, history


def predict_logits(model: nn.Module, x: np.ndarray) -> np.ndarray:
    was = model.training
    model.eval()
    out = model(Tensor(np.asarray(x, dtype=np.float32))).data
    model.train(was)
    return out


def train_probe(features: np.ndarray, labels: np.ndarray, spec: ProbeSpec | None = None,
                rng: np.random.Generator | None = None) -> float:
    """Held-out accuracy of a probe on frozen features.

    Splits off ``spec.test_fraction`` for testing and reports test accuracy
    averaged over the final 10% of epochs.
    """
    spec = spec if spec is not None else ProbeSpec()
    rng = rng if rng is not None else np.random.default_rng()
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2:
        features = features.reshape(len(features), -1)
    if len(features) != len(labels):
        raise ValueError(f"{len(features)} feature rows but {len(labels)} labels")
    classes, y = np.unique(labels, return_inverse=True)
    order = rng.permutation(len(y))
    n_test = max(1, int(round(len(y) * spec.test_fraction)))
    test, train = order[:n_test], order[n_test:]
    xtr, xte = standardize(features[train], features[test])
    _, history = fit_classifier(xtr, y[train], spec, rng, len(classes), xte, y[test])
    return tail_mean(history)
