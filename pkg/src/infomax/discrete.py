"""Exact information measures on discrete joints and the JSD-vs-MI rank experiment.

All quantities are in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import rel_entr


@dataclass
class DiscreteJoint:
    p: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.p.ndim != 2 or min(self.p.shape) < 1:
            raise ValueError("joint must be a non-empty 2-D matrix")
        if (self.p < 0).any():
            raise ValueError("joint has negative entries")
        if abs(self.p.sum() - 1.0) > 1e-12:
            raise ValueError(f"joint sums to {self.p.sum()!r}, not 1")

    @property
    def n_x(self) -> int:
        return self.p.shape[0]

    @property
    def n_y(self) -> int:
        return self.p.shape[1]

    @property
    def px(self) -> np.ndarray:
        return self.p.sum(axis=1)

    @property
    def py(self) -> np.ndarray:
        return self.p.sum(axis=0)

    def product(self) -> np.ndarray:
        return np.outer(self.px, self.py)


@dataclass(frozen=True)
class JointSamplerConfig:
    n_x: int = 8
    n_y: int = 8
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise ValueError("joint dimensions must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")


def sample_random_joint(cfg: JointSamplerConfig, rng: np.random.Generator) -> DiscreteJoint:
    """Uniform logits per row, dropout to -inf, row softmax, uniform p(x)."""
    logits = rng.uniform(size=(cfg.n_x, cfg.n_y))
    keep = rng.uniform(size=logits.shape) >= cfg.dropout_rate
    dead = ~keep.any(axis=1)
    while dead.any():
        logits[dead] = rng.uniform(size=(dead.sum(), cfg.n_y))
        keep[dead] = rng.uniform(size=(dead.sum(), cfg.n_y)) >= cfg.dropout_rate
        dead = ~keep.any(axis=1)
    z = np.where(keep, np.exp(logits - logits.max(axis=1, keepdims=True)), 0.0)
    cond = z / z.sum(axis=1, keepdims=True)
    p = cond / cfg.n_x
    return DiscreteJoint(p / p.sum())


def exact_mi(j: DiscreteJoint) -> float:
    return float(rel_entr(j.p, j.product()).sum())


def exact_jsd(j: DiscreteJoint) -> float:
    """JSD(joint || product of marginals); lies in [0, ln 2]."""
    q = j.product()
    m = 0.5 * (j.p + q)
    return float(0.5 * rel_entr(j.p, m).sum() + 0.5 * rel_entr(q, m).sum())


@dataclass
class MonotonicityResult:
    scatter: list = field(default_factory=list)   # (size, draw_index, mi, jsd)
    summary: list = field(default_factory=list)   # (size, spearman_rho, draws, degenerate)
    dropout_rate: float = 0.5

    def rho(self, size: int) -> float:
        for s, r, _, _ in self.summary:
            if s == size:
                return r
        raise KeyError(size)


def rank_correlation(a, b) -> tuple[float, bool]:
    """Spearman rho, or (nan, True) when either input has no spread."""
    a, b = np.asarray(a), np.asarray(b)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return math.nan, True
    return float(stats.spearmanr(a, b).statistic), False


def monotonicity_experiment(sizes=(8, 16, 32, 64, 128), draws: int = 1000, dropout_rate: float = 0.5,
                            rng: np.random.Generator | None = None) -> MonotonicityResult:
    """Draw square random joints per size and rank-correlate exact MI with exact JSD."""
    if draws < 2:
        raise ValueError("need at least two draws per size")
    if any(s < 2 for s in sizes):
        raise ValueError("sizes must be at least 2")
    rng = rng if rng is not None else np.random.default_rng()
    out = MonotonicityResult(dropout_rate=dropout_rate)
    for size in sizes:
        cfg = JointSamplerConfig(size, size, dropout_rate)
        mis, jsds = [], []
        for d in range(draws):
            j = sample_random_joint(cfg, rng)
            mi, jsd = exact_mi(j), exact_jsd(j)
            mis.append(mi)
            jsds.append(jsd)
            out.scatter.append((size, d, mi, jsd))
        rho, degenerate = rank_correlation(mis, jsds)
        out.summary.append((size, rho, draws, degenerate))
    return out
