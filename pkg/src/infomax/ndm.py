"""Neural Dependency Measure: DV estimate of KL(joint || product of factor marginals)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from . import nn
from . import tensor as T
from .estimators import ScoreMatrix, TrainingDivergedError, dv_estimate, tail_mean
from .tensor import Tensor


@dataclass(frozen=True)
class NdmConfig:
    hidden: tuple = (512, 512)
    steps: int = 600
    batch_size: int = 128
    lr: float = 1e-4
    use_sigmoid_output: bool = False
    preprocess: str = "rank"        # rank | standardize | none

    def __post_init__(self):
        if self.preprocess not in PREPROCESSORS:
            raise ValueError(f"unknown preprocess {self.preprocess!r}; expected one of {sorted(PREPROCESSORS)}")


@dataclass
class NdmResult:
    estimate: float                 # max(raw, 0)
    raw: float
    curve: list = field(default_factory=list)


def shuffle_factors(batch, rng: np.random.Generator) -> np.ndarray:
    """Permute every column independently along the batch axis."""
    z = batch.data if isinstance(batch, Tensor) else np.asarray(batch)
    if z.ndim != 2:
        raise ValueError(f"expected a (B, D) batch, got shape {z.shape}")
    if z.shape[0] < 2:
        raise ValueError("shuffling needs a batch of at least 2")
    idx = np.argsort(rng.uniform(size=z.shape), axis=0)
    return np.take_along_axis(z, idx, axis=0)


def rank_columns(z: np.ndarray) -> np.ndarray:
    """Within-batch ranks per column, rescaled to zero mean and unit variance.

    A per-coordinate monotone map, so the joint-vs-product KL is unchanged
    while heavy tails and odd scales disappear. Every column of a
    factor-shuffled batch holds the same values, hence the same ranks.
    """
    u = (rankdata(z, axis=0, method="average") - 0.5) / len(z)
    return (u - 0.5) * np.sqrt(12.0)


def standardize_columns(z: np.ndarray) -> np.ndarray:
    return (z - z.mean(axis=0)) / (z.std(axis=0) + 1e-8)


PREPROCESSORS = {"rank": rank_columns, "standardize": standardize_columns, "none": lambda z: z}


def _sampler(stream) -> Callable:
    if callable(stream):
        return stream
    data = np.asarray(stream)

    def sample(rng, n):
        return data[rng.choice(len(data), size=min(n, len(data)), replace=False)]

    return sample


def ndm_estimate(stream, cfg: NdmConfig | None = None, rng=None, dtype=np.float32) -> NdmResult:
    """Train a discriminator with the DV objective: real rows vs factor-shuffled rows.

    ``stream`` is a (N, D) array or a callable ``sample(rng, n) -> (n, D)``
    giving fresh batches.
    """
    cfg = cfg if cfg is not None else NdmConfig()
    rng = rng if rng is not None else np.random.default_rng()
    sample = _sampler(stream)
    D = np.asarray(sample(rng, 2)).shape[1]
    critic = nn.mlp([D, *cfg.hidden, 1], rng, dtype=dtype)
    opt = nn.Adam(critic.parameters(), lr=cfg.lr)
    values, curve = [], []
    for step in range(cfg.steps):
        z = np.asarray(sample(rng, cfg.batch_size), dtype=np.float64)
        if cfg.use_sigmoid_output:
            z = 1.0 / (1.0 + np.exp(-z))
        z = PREPROCESSORS[cfg.preprocess](z)
        fake = shuffle_factors(z, rng)
        real_s = critic(Tensor(z.astype(dtype)))
        fake_s = critic(Tensor(fake.astype(dtype)))
        est = dv_estimate(ScoreMatrix(T.concat([real_s, fake_s], axis=1)))
        value = est.item()
        if not np.isfinite(value):
            raise TrainingDivergedError(step, "non-finite NDM estimate")
        opt.zero_grad()
        T.backward(-est)
        try:
            opt.step()
        except nn.NonFiniteGradientError as exc:
            raise TrainingDivergedError(step, str(exc)) from exc
        values.append(value)
        curve.append((step, value))
    raw = tail_mean(values)
    return NdmResult(max(raw, 0.0), raw, curve)


def dependent_pairs(rho: float, dim_pairs: int = 1):
    """Sampler of [z, rho z + sqrt(1 - rho^2) eps] columns."""
    def sample(rng, n):
        z = rng.standard_normal((n, dim_pairs))
        y = rho * z + np.sqrt(1 - rho * rho) * rng.standard_normal((n, dim_pairs))
        return np.hstack([z, y])
    return sample


def duplicated_uniform(rng, n):
    z = rng.uniform(size=(n, 1))
    return np.hstack([z, z])


def independent_uniform(d: int = 8):
    return lambda rng, n: rng.uniform(size=(n, d))
