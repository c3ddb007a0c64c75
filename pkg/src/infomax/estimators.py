"""Mutual-information lower bounds, negative sampling and critic training.

A :class:`ScoreMatrix` holds one row per positive pair: column 0 is the
critic's score for the matched pair and the remaining columns are scores of
the same anchor against mismatched candidates (the negatives).

The three estimators:

* ``dv``      mean(positives) - log mean(exp(negatives))
* ``jsd``     mean(-softplus(-positives)) - mean(softplus(negatives))
* ``infonce`` mean over rows of positive - logsumexp(row)

``infonce`` is reported exactly as written above, so it lives in
``[-inf, 0]`` and sits at ``-ln K`` for an uninformative critic. Adding ``ln K``
turns it into the usual MI lower bound; :func:`mi_lower_bound` does that.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor


@dataclass
class ScoreMatrix:
    scores: Tensor
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.scores.ndim != 2:
            raise ValueError(f"score matrix must be 2-D, got {self.scores.shape}")
        if self.scores.shape[0] < 1 or self.scores.shape[1] < 2:
            raise ValueError("score matrix needs at least one positive and one negative")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.scores.shape:
                raise ValueError("mask shape must match scores")
            if not self.mask[:, 0].all():
                raise ValueError("positive column must be fully valid")
            if not self.mask[:, 1:].any():
                raise ValueError("mask leaves no negatives")

    @property
    def K(self) -> int:
        """Candidates per anchor (positive included)."""
        return self.scores.shape[1]

    @property
    def n_negatives(self) -> int:
        if self.mask is None:
            return self.scores.shape[0] * (self.K - 1)
        return int(self.mask[:, 1:].sum())

    def positives(self) -> Tensor:
        return T.take(self.scores, (slice(None), 0))

    def negatives(self) -> Tensor:
        """All valid negative scores, flattened."""
        neg = T.take(self.scores, (slice(None), slice(1, None)))
        if self.mask is None:
            return T.reshape(neg, (-1,))
        return T.take(neg, np.nonzero(self.mask[:, 1:]))


def dv_estimate(sm: ScoreMatrix) -> Tensor:
    neg = sm.negatives()
    return T.mean(sm.positives()) - (T.logsumexp(neg) - math.log(neg.size))


def jsd_estimate(sm: ScoreMatrix) -> Tensor:
    return T.mean(-T.softplus(-sm.positives())) - T.mean(T.softplus(sm.negatives()))


def infonce_estimate(sm: ScoreMatrix) -> Tensor:
    s = sm.scores
    if sm.mask is not None:
        # masked candidates drop out of the softmax
        s = s + Tensor(np.where(sm.mask, 0.0, -1e30).astype(s.dtype))
    return T.mean(sm.positives() - T.logsumexp(s, axis=1))


ESTIMATORS: dict[str, Callable[[ScoreMatrix], Tensor]] = {
    "dv": dv_estimate,
    "jsd": jsd_estimate,
    "infonce": infonce_estimate,
}


def get_estimator(kind: str) -> Callable[[ScoreMatrix], Tensor]:
    try:
        return ESTIMATORS[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown estimator {kind!r}; expected one of {sorted(ESTIMATORS)}") from None


def mi_lower_bound(kind: str, value: float, K: int) -> float:
    """Put an estimator value on the MI scale (only infoNCE needs the ``ln K`` shift)."""
    return value + math.log(K) if kind.lower() == "infonce" else value


def zero_mi_value(kind: str, K: int) -> float:
    """Estimator value reached by a critic that carries no information."""
    return {"dv": 0.0, "jsd": -2 * math.log(2), "infonce": -math.log(K)}[kind.lower()]


# -- negative sampling --------------------------------------------------------------

@dataclass
class NegativeSamplingConfig:
    """How negatives are drawn for each positive pair.

    ``negatives_per_positive=None`` keeps every available candidate.
    ``source="cross-batch"`` draws negatives from a separate candidate batch
    passed to :func:`build_score_matrix`.
    """

    negatives_per_positive: int | None = None
    exclude_positive_from_marginals: bool = True
    source: str = "within-batch"

    def __post_init__(self):
        if self.source not in ("within-batch", "cross-batch"):
            raise ValueError(f"unknown negative source {self.source!r}")
        if self.negatives_per_positive is not None and self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be a positive int")


def score_layout(n_anchors: int, n_items: int, locations: int, cfg: NegativeSamplingConfig,
                 rng: np.random.Generator | None = None, positive_in_raw: bool = True):
    """Row/column indices that gather a ScoreMatrix out of raw pair scores.

    Raw scores are laid out ``(anchor, item * locations + location)``; anchor
    ``j``'s positives are item ``j`` at every location. Returns ``(rows, cols)``
    integer arrays of shape ``(n_anchors * locations, 1 + negatives)``.
    """
    exclude = cfg.source == "within-batch" and cfg.exclude_positive_from_marginals
    if cfg.source == "within-batch" and n_items < 2:
        raise ValueError("within-batch negatives need a batch of at least 2")
    cand = _candidates(n_anchors, n_items, locations, exclude)
    n = cfg.negatives_per_positive
    if n is not None and n > cand.shape[1]:
        raise ValueError(f"requested {n} negatives per positive but only {cand.shape[1]} available")
    if n is None or n == cand.shape[1]:
        return _full_layout(n_anchors, n_items, locations, exclude, positive_in_raw)
    rng = rng if rng is not None else np.random.default_rng()
    pick = np.argsort(rng.uniform(size=cand.shape), axis=1)[:, :n]
    return _assemble(np.take_along_axis(cand, pick, axis=1), n_anchors, locations, positive_in_raw)


@lru_cache(maxsize=64)
def _candidates(n_anchors: int, n_items: int, L: int, exclude: bool) -> np.ndarray:
    """(n_anchors, negatives) raw column indices available to each anchor."""
    if exclude:
        k = np.arange(n_items - 1)
        items = k[None, :] + (k[None, :] >= np.arange(n_anchors)[:, None])
    else:
        items = np.broadcast_to(np.arange(n_items), (n_anchors, n_items))
    cand = (items[:, :, None] * L + np.arange(L)).reshape(n_anchors, -1)
    cand.flags.writeable = False
    return cand


@lru_cache(maxsize=64)
def _full_layout(n_anchors, n_items, L, exclude, positive_in_raw):
    rows, cols = _assemble(_candidates(n_anchors, n_items, L, exclude), n_anchors, L, positive_in_raw)
    rows.flags.writeable = cols.flags.writeable = False
    return rows, cols


def _assemble(cand: np.ndarray, n_anchors: int, L: int, positive_in_raw: bool):
    j = np.repeat(np.arange(n_anchors), L)
    pos_cols = j * L + np.tile(np.arange(L), n_anchors) if positive_in_raw else np.zeros_like(j)
    cols = np.concatenate([pos_cols[:, None], np.repeat(cand, L, axis=0)], axis=1)
    rows = np.repeat(j[:, None], cols.shape[1], axis=1)
    return rows, cols


def build_score_matrix(critic, anchors: Tensor, candidates: Tensor,
                       cfg: NegativeSamplingConfig | None = None,
                       rng: np.random.Generator | None = None,
                       negative_candidates: Tensor | None = None) -> ScoreMatrix:
    """Score every (anchor, candidate) pair and arrange positives/negatives.

    ``critic(anchors, candidates)`` must return raw scores of shape
    ``(B, B * L)`` where ``L`` is the number of locations per candidate (1 for
    vector candidates, ``M*M`` for local feature maps).
    """
    cfg = cfg if cfg is not None else NegativeSamplingConfig()
    B = anchors.shape[0]
    if candidates.shape[0] != B:
        raise ValueError("anchors and candidates must pair up one-to-one")
    raw = critic(anchors, candidates)
    L = raw.shape[1] // B
    if cfg.source == "within-batch":
        rows, cols = score_layout(B, B, L, cfg, rng)
        return ScoreMatrix(T.take(raw, (rows, cols)))
    if negative_candidates is None:
        raise ValueError("cross-batch negatives need negative_candidates")
    n_items = negative_candidates.shape[0]
    rows, cols = score_layout(B, n_items, L, cfg, rng, positive_in_raw=False)
    neg_raw = critic(anchors, negative_candidates)
    pos = T.take(raw, (rows[:, 0], np.repeat(np.arange(B), L) * L + np.tile(np.arange(L), B)))
    neg = T.take(neg_raw, (rows[:, 1:], cols[:, 1:]))
    return ScoreMatrix(T.concat([T.reshape(pos, (-1, 1)), neg], axis=1))


# -- critics ------------------------------------------------------------------------

def _flatten_candidates(c: Tensor) -> tuple[Tensor, int]:
    """(B, d) -> itself; (B, d, M, M) -> (B*M*M, d) in item-major order."""
    if c.ndim == 2:
        return c, 1
    if c.ndim == 4:
        B, d, H, W = c.shape
        return T.reshape(T.transpose(c, (0, 2, 3, 1)), (B * H * W, d)), H * W
    raise ValueError(f"candidates must be (B, d) or (B, d, M, M), got {c.shape}")


class ConcatCritic(nn.Module):
    """``T(x, y) = MLP([x; y])`` evaluated on every anchor/candidate pair.

    The first layer is split into candidate and anchor halves so each half is
    computed once and the pairwise pre-activations are a broadcast sum. Applied
    per location this is exactly a stack of 1x1 convolutions on the
    concatenated map.
    """

    def __init__(self, dim_candidate: int, dim_anchor: int, hidden: Sequence[int] = (512, 512),
                 rng=None, dtype=np.float32):
        if not hidden:
            raise ValueError("ConcatCritic needs at least one hidden layer")
        self.dim_candidate, self.dim_anchor = dim_candidate, dim_anchor
        self.first_c = nn.Linear(dim_candidate, hidden[0], rng, bias=False, dtype=dtype)
        self.first_a = nn.Linear(dim_anchor, hidden[0], rng, dtype=dtype)
        # He fan-in of the split layer is the full concatenated width
        scale = math.sqrt(dim_candidate / (dim_candidate + dim_anchor))
        self.first_c.weight.data *= scale
        self.first_a.weight.data *= math.sqrt(dim_anchor / (dim_candidate + dim_anchor))
        self.rest = nn.mlp(list(hidden) + [1], rng, dtype=dtype)

    def forward(self, anchors: Tensor, candidates: Tensor) -> Tensor:
        c, L = _flatten_candidates(candidates)
        B, N, H = anchors.shape[0], c.shape[0], self.first_a.out_features
        ha = T.reshape(self.first_a(anchors), (B, 1, H))
        hc = T.reshape(self.first_c(c), (1, N, H))
        h = T.relu(T.broadcast_to(ha, (B, N, H)) + T.broadcast_to(hc, (B, N, H)))
        out = self.rest(T.reshape(h, (B * N, H)))
        return T.reshape(out, (B, N))

    def pair_scores(self, candidates: Tensor, anchors: Tensor) -> Tensor:
        """Scores of matched pairs only: ``T(candidates[i], anchors[i])``."""
        c, L = _flatten_candidates(candidates)
        if L != 1:
            raise ValueError("pair_scores expects vector candidates")
        h = T.relu(self.first_c(c) + self.first_a(anchors))
        return T.reshape(self.rest(h), (-1,))


class SeparableCritic(nn.Module):
    """``T(x, y) = g(x) . h(y)`` with two ReLU MLP embedders."""

    def __init__(self, dim_candidate: int, dim_anchor: int, hidden: Sequence[int] = (256,),
                 embed: int = 64, rng=None, dtype=np.float32):
        self.g = nn.mlp([dim_candidate, *hidden, embed], rng, dtype=dtype)
        self.h = nn.mlp([dim_anchor, *hidden, embed], rng, dtype=dtype)

    def forward(self, anchors: Tensor, candidates: Tensor) -> Tensor:
        c, L = _flatten_candidates(candidates)
        return T.matmul(self.h(anchors), T.transpose(self.g(c)))


def make_critic(kind: str, dim_candidate: int, dim_anchor: int, hidden=(64, 64), rng=None,
                dtype=np.float32, embed: int = 32):
    if kind == "concat":
        return ConcatCritic(dim_candidate, dim_anchor, hidden, rng, dtype)
    if kind == "separable":
        return SeparableCritic(dim_candidate, dim_anchor, hidden, embed, rng, dtype)
    raise ValueError(f"unknown critic kind {kind!r}")


# -- MINE-style fitting -------------------------------------------------------------------

class TrainingDivergedError(FloatingPointError):
    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"training diverged at step {step}" + (f": {detail}" if detail else ""))
        self.step = step


@dataclass
class MineResult:
    kind: str
    estimate: float          # raw estimator value, mean of the final 10% of steps
    mi: float                # same, on the MI scale (infoNCE shifted by ln K)
    K: int
    curve: list = field(default_factory=list)   # rows of (step, estimate, loss, lr)
    critic: object = None


def tail_mean(values: Sequence[float], fraction: float = 0.1) -> float:
    values = np.asarray(values, dtype=np.float64)
    n = max(1, int(math.ceil(len(values) * fraction)))
    return float(values[-n:].mean())


def array_sampler(x: np.ndarray, y: np.ndarray) -> Callable:
    """Minibatch sampler (without replacement within a batch) over paired arrays."""
    x, y = np.asarray(x), np.asarray(y)
    if len(x) != len(y):
        raise ValueError(f"paired streams differ in length: {len(x)} vs {len(y)}")

    def sample(rng: np.random.Generator, batch_size: int):
        idx = rng.choice(len(x), size=min(batch_size, len(x)), replace=False)
        return x[idx], y[idx]

    return sample


def mine_fit(stream_a, stream_b=None, kind: str = "dv", critic=None, *, critic_kind: str = "concat",
             hidden=(64, 64), steps: int = 1000, batch_size: int = 128, lr: float = 1e-3,
             schedule=None, negatives: NegativeSamplingConfig | None = None,
             rng=None, dtype=np.float32) -> MineResult:
    """Train a critic to maximise the chosen MI bound between two paired streams.

    ``stream_a``/``stream_b`` are equal-length arrays, or ``stream_a`` is a
    callable ``sample(rng, batch_size) -> (a, b)`` producing fresh pairs and
    ``stream_b`` is None. Each step scores a new batch, records the estimate
    *before* the update, then takes one Adam step on ``-estimate``.
    """
    rng = rng if rng is not None else np.random.default_rng()
    estimator = get_estimator(kind)
    sample = stream_a if callable(stream_a) else array_sampler(stream_a, stream_b)
    cfg = negatives if negatives is not None else NegativeSamplingConfig()
    a0, b0 = sample(rng, 2)
    a0, b0 = np.asarray(a0).reshape(2, -1), np.asarray(b0).reshape(2, -1)
    if critic is None:
        critic = make_critic(critic_kind, a0.shape[1], b0.shape[1], hidden, rng, dtype)
    opt = nn.Adam(critic.parameters(), lr=lr, schedule=schedule)
    curve, values = [], []
    K = None
    for step in range(steps):
        a, b = sample(rng, batch_size)
        a = Tensor(np.asarray(a, dtype=dtype).reshape(len(a), -1))
        b = Tensor(np.asarray(b, dtype=dtype).reshape(len(b), -1))
        try:
            sm = build_score_matrix(critic, b, a, cfg, rng)
            est = estimator(sm)
        except FloatingPointError as exc:
            raise TrainingDivergedError(step, str(exc)) from exc
        K = sm.K
        value = est.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(step, "non-finite estimate")
        lr_now = opt.lr
        opt.zero_grad()
        loss = -est
        T.backward(loss)
        try:
            opt.step()
        except nn.NonFiniteGradientError as exc:
            raise TrainingDivergedError(step, str(exc)) from exc
        values.append(value)
        curve.append((step, value, -value, lr_now))
    raw = tail_mean(values)
    return MineResult(kind, raw, mi_lower_bound(kind, raw, K), K, curve, critic)


def evaluate_critic(critic, kind: str, a: np.ndarray, b: np.ndarray,
                    negatives: NegativeSamplingConfig | None = None, rng=None,
                    dtype=np.float32) -> float:
    """Estimator value of a fixed critic on one batch (no training)."""
    a = Tensor(np.asarray(a, dtype=dtype).reshape(len(a), -1))
    b = Tensor(np.asarray(b, dtype=dtype).reshape(len(b), -1))
    sm = build_score_matrix(critic, b, a, negatives, rng)
    return get_estimator(kind)(sm).item()
