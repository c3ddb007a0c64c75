"""Deep InfoMax: encoder, MI scorers, prior matching and the training step."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .estimators import (
    ConcatCritic, NegativeSamplingConfig, build_score_matrix, get_estimator,
)
from .tensor import Tensor


class DimEncoder(nn.Module):
    """Conv stack -> local map C(x); MLP head on the flattened map -> global E(x).

    Each conv is 3x3, stride 2, "same" padding, followed by batch norm and
    ReLU; the local map is taken after the last ReLU. Layers feeding batch
    norm carry no bias, since the normalisation would cancel it. The global head is
    ``flatten -> hidden (BN, ReLU) -> out_dim -> sigmoid``.
    """

    def __init__(self, in_channels: int = 1, image_size: int = 16, widths=(32, 64),
                 hidden: int = 256, out_dim: int = 64, rng=None, dtype=np.float32):
        self.in_channels, self.image_size = in_channels, image_size
        layers = []
        c, s = in_channels, image_size
        for w in widths:
            layers += [nn.Conv2d(c, w, 3, stride=2, padding="same", rng=rng, bias=False, dtype=dtype),
                       nn.BatchNorm(w, dtype=dtype), nn.ReLU()]
            c, s = w, -(-s // 2)
        if s < 1:
            raise ValueError("image too small for the conv stack")
        self.local_dim, self.M = c, s
        self.out_dim = out_dim
        self.convs = nn.Sequential(*layers)
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(c * s * s, hidden, rng, bias=False, dtype=dtype), nn.BatchNorm(hidden, dtype=dtype), nn.ReLU(),
            nn.Linear(hidden, out_dim, rng, init="glorot", dtype=dtype), nn.Sigmoid(),
        )

    def local_features(self, x: Tensor) -> Tensor:
        shape = (self.in_channels, self.image_size, self.image_size)
        if x.ndim != 4 or x.shape[1:] != shape:
            raise ValueError(f"encoder expects (B, {shape[0]}, {shape[1]}, {shape[2]}) input, got {x.shape}")
        return self.convs(x)

    def global_features(self, local: Tensor) -> Tensor:
        return self.head(local)

    def encode(self, x: Tensor) -> tuple[Tensor, Tensor]:
        local = self.local_features(x)
        return local, self.global_features(local)

    forward = encode


# -- scorers -------------------------------------------------------------------
# Every scorer maps (global E: B x g, local C: B x d x M x M) to raw scores of
# shape (B, B * M * M): entry (j, b * M*M + i) scores E_j against C_b at location i.

class ConcatConvolveScorer(ConcatCritic):
    """1x1-conv discriminator on ``[C^(i); E]`` at every location."""

    def __init__(self, local_dim: int, global_dim: int, hidden=(512, 512), rng=None, dtype=np.float32):
        super().__init__(local_dim, global_dim, hidden, rng, dtype)


class _DotEmbedder(nn.Module):
    """``Lin(ReLU(Lin(x))) + ReLU(Lin(x))`` as 1x1 convolutions, with optional channel LN."""

    def __init__(self, d: int, width: int, norm: bool, rng, dtype):
        self.a = nn.Conv2d(d, width, 1, rng=rng, dtype=dtype)
        self.b = nn.Conv2d(width, width, 1, rng=rng, init="glorot", dtype=dtype)
        self.shortcut = nn.Conv2d(d, width, 1, rng=rng, dtype=dtype)
        self.norm = nn.ChannelLayerNorm(width, dtype=dtype) if norm else None

    def forward(self, x: Tensor) -> Tensor:
        out = self.b(T.relu(self.a(x))) + T.relu(self.shortcut(x))
        return self.norm(out) if self.norm is not None else out


class EncodeDotScorer(nn.Module):
    """Embed global and local features into a shared space; score by dot product."""

    def __init__(self, local_dim: int, global_dim: int, width: int = 2048, rng=None, dtype=np.float32):
        self.width = width
        self.global_embed = _DotEmbedder(global_dim, width, False, rng, dtype)
        self.local_embed = _DotEmbedder(local_dim, width, True, rng, dtype)

    def forward(self, glob: Tensor, local: Tensor) -> Tensor:
        if local.ndim == 2:
            local = T.reshape(local, local.shape + (1, 1))
        B, _, H, W = local.shape
        g = T.reshape(self.global_embed(T.reshape(glob, glob.shape + (1, 1))), (glob.shape[0], self.width))
        c = T.reshape(T.transpose(self.local_embed(local), (0, 2, 3, 1)), (B * H * W, self.width))
        return T.matmul(g, T.transpose(c))


SCORERS = {"concat-convolve": ConcatConvolveScorer, "encode-dot": EncodeDotScorer}


def make_scorer(kind: str, local_dim: int, global_dim: int, width=None, rng=None, dtype=np.float32):
    if kind == "concat-convolve":
        hidden = (512, 512) if width is None else ((width, width) if isinstance(width, int) else tuple(width))
        return ConcatConvolveScorer(local_dim, global_dim, hidden, rng, dtype)
    if kind == "encode-dot":
        return EncodeDotScorer(local_dim, global_dim, 2048 if width is None else int(width), rng, dtype)
    raise ValueError(f"unknown scorer {kind!r}; expected one of {sorted(SCORERS)}")


# -- prior matching --------------------------------------------------------------

@dataclass(frozen=True)
class PriorConfig:
    kind: str = "uniform01"
    dim: int = 64
    hidden: tuple = (1000, 200)
    nonsaturating: bool = True

    def __post_init__(self):
        if self.kind != "uniform01":
            raise ValueError(f"unsupported prior {self.kind!r}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(0.0, 1.0, size=(n, self.dim))


class PriorDiscriminator(nn.Module):
    """MLP returning the logit of D(y) = P(y came from the prior)."""

    def __init__(self, cfg: PriorConfig = PriorConfig(), rng=None, dtype=np.float32):
        self.cfg = cfg
        self.net = nn.mlp([cfg.dim, *cfg.hidden, 1], rng, dtype=dtype)

    def forward(self, y: Tensor) -> Tensor:
        return T.reshape(self.net(y), (-1,))


def prior_match_losses(disc: PriorDiscriminator, glob: Tensor, rng: np.random.Generator,
                       prior: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """(discriminator loss, encoder loss) for adversarial prior matching.

    The discriminator maximises ``E_prior[log D] + E_enc[log(1 - D)]``, so its
    loss is the negation. The encoder loss is ``E_enc[log(1 - D)]`` or, with
    ``nonsaturating``, ``-E_enc[log D]``. Log-probabilities come straight from
    logits via softplus, so D never has to be materialised.
    """
    if prior is None:
        prior = disc.cfg.sample(rng, glob.shape[0])
    real = disc(Tensor(np.asarray(prior, dtype=glob.dtype)))
    fake_for_d = disc(glob.detach())
    d_objective = T.mean(-T.softplus(-real)) + T.mean(-T.softplus(fake_for_d))
    fake = disc(glob)
    if disc.cfg.nonsaturating:
        e_loss = T.mean(T.softplus(-fake))
    else:
        e_loss = T.mean(-T.softplus(fake))
    return -d_objective, e_loss


# -- objectives ------------------------------------------------------------------

def flatten_local(local: Tensor) -> Tensor:
    return T.reshape(local, (local.shape[0], -1))


def mi_term(scorer, candidates: Tensor, glob: Tensor, estimator: str,
            cfg: NegativeSamplingConfig | None = None, rng=None) -> Tensor:
    """Negated estimate for scoring ``glob`` against ``candidates`` (vectors or maps).

    For maps, rows are (image, location) pairs and every location of an anchor
    shares the same negatives, so the pooled estimate equals the average of
    per-location estimates for all three estimators.
    """
    sm = build_score_matrix(scorer, glob, candidates, cfg, rng)
    return -get_estimator(estimator)(sm)


def global_mi_objective(enc: DimEncoder, scorer, batch, estimator: str = "jsd",
                        cfg: NegativeSamplingConfig | None = None, rng=None) -> Tensor:
    local, glob = enc.encode(_as_tensor(batch))
    return mi_term(scorer, flatten_local(local), glob, estimator, cfg, rng)


def local_mi_objective(enc: DimEncoder, scorer, batch, estimator: str = "jsd",
                       cfg: NegativeSamplingConfig | None = None, rng=None) -> Tensor:
    local, glob = enc.encode(_as_tensor(batch))
    return mi_term(scorer, local, glob, estimator, cfg, rng)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


# -- hyperparameters and total loss ---------------------------------------------

@dataclass(frozen=True)
class DimHyperparams:
    alpha: float = 0.0
    beta: float = 1.0
    gamma: float = 0.1
    estimator: str = "infonce"
    scorer: str = "encode-dot"
    occlude: bool = False
    abs_coord: float = 0.0
    rel_coord: float = 0.0

    def __post_init__(self):
        weights = (self.alpha, self.beta, self.gamma, self.abs_coord, self.rel_coord)
        if any(w < 0 for w in weights):
            raise ValueError("objective weights must be nonnegative")
        if self.alpha == 0 and self.beta == 0 and self.gamma == 0:
            raise ValueError("alpha, beta and gamma are all zero: nothing to train")
        get_estimator(self.estimator)
        if self.scorer not in SCORERS:
            raise ValueError(f"unknown scorer {self.scorer!r}")

    @classmethod
    def preset(cls, name: str, **overrides) -> "DimHyperparams":
        table = {
            "dim-g": dict(alpha=1.0, beta=0.0, gamma=1.0),
            "dim-l": dict(alpha=0.0, beta=1.0, gamma=0.1),
            "dim-lg": dict(alpha=0.5, beta=0.1),
        }
        key = name.lower().replace("(", "-").replace(")", "").replace("+", "")
        if key not in table:
            raise ValueError(f"unknown preset {name!r}; expected one of {sorted(table)}")
        if key == "dim-lg" and "gamma" not in overrides:
            raise ValueError("the DIM(L+G) preset has no prior weight; pass gamma explicitly")
        return cls(**{**table[key], **overrides})


PART_WEIGHTS = {"global": "alpha", "local": "beta", "prior_e": "gamma",
                "abs_coord": "abs_coord", "rel_coord": "rel_coord"}


def total_loss(h: DimHyperparams, parts: dict) -> Tensor:
    """Weighted sum of the objective parts with nonzero weight."""
    total = None
    for part, attr in PART_WEIGHTS.items():
        w = getattr(h, attr)
        if w == 0:
            continue
        if part not in parts:
            raise KeyError(f"weight {attr}={w} needs the {part!r} loss")
        term = parts[part] * w
        total = term if total is None else total + term
    return total


# -- model + training step ---------------------------------------------------------

class DimModel(nn.Module):
    """Encoder with its MI scorers, prior discriminator and coordinate heads."""

    def __init__(self, h: DimHyperparams, image_size: int = 16, in_channels: int = 1,
                 widths=(32, 64), hidden: int = 256, out_dim: int = 64,
                 scorer_width=None, global_scorer_width=None, prior: PriorConfig | None = None,
                 coord_hidden=(512, 512), rng=None, dtype=np.float32):
        from .auxiliary import CoordPredictor

        self.h = h
        self.encoder = DimEncoder(in_channels, image_size, widths, hidden, out_dim, rng, dtype)
        d, M = self.encoder.local_dim, self.encoder.M
        self.global_scorer = (ConcatConvolveScorer(d * M * M, out_dim, _hidden(global_scorer_width), rng, dtype)
                              if h.alpha > 0 else None)
        self.local_scorer = (make_scorer(h.scorer, d, out_dim, scorer_width, rng, dtype)
                             if h.beta > 0 else None)
        prior = prior if prior is not None else PriorConfig(dim=out_dim)
        if prior.dim != out_dim:
            raise ValueError("prior dimension must match the encoder output")
        self.prior_disc = PriorDiscriminator(prior, rng, dtype) if h.gamma > 0 else None
        self.abs_coord = CoordPredictor(out_dim, d, M, coord_hidden, False, rng, dtype) if h.abs_coord > 0 else None
        self.rel_coord = CoordPredictor(out_dim, d, M, coord_hidden, True, rng, dtype) if h.rel_coord > 0 else None

    def main_parameters(self) -> list[Tensor]:
        """psi, omega_1, omega_2 and coordinate heads: everything except the prior discriminator."""
        disc = {id(p) for p in self.prior_disc.parameters()} if self.prior_disc is not None else set()
        return [p for p in self.parameters() if id(p) not in disc]

    def make_optimizers(self, lr: float = 1e-4, schedule=None, prior_lr: float | None = None,
                        betas=(0.9, 0.999)):
        """Adam for {psi, omega} and a separate Adam for the prior discriminator."""
        main = nn.Adam(self.main_parameters(), lr=lr, betas=betas, schedule=schedule)
        prior = None
        if self.prior_disc is not None:
            prior = nn.Adam(self.prior_disc.parameters(), lr=lr if prior_lr is None else prior_lr,
                            betas=betas, schedule=schedule)
        return main, prior

    def encode(self, x) -> tuple[Tensor, Tensor]:
        return self.encoder.encode(_as_tensor(x))

    def transform(self, x, batch_size: int = 512) -> np.ndarray:
        """Frozen global features in eval mode."""
        was = self.training
        self.eval()
        x = np.asarray(x, dtype=np.float32)
        out = [self.encoder.encode(Tensor(x[i:i + batch_size]))[1].data for i in range(0, len(x), batch_size)]
        self.train(was)
        return np.concatenate(out) if out else np.zeros((0, self.encoder.out_dim), np.float32)

    def calibrate_batch_norm(self, x, n: int = 2000, batch_size: int = 200) -> None:
        """Refresh BN running statistics with train-mode passes; weights are untouched.

        An untrained encoder still carries the initial running stats (0, 1),
        which make its eval-mode features a poor random baseline.
        """
        was = self.training
        self.train()
        x = np.asarray(x, dtype=np.float32)[:n]
        for i in range(0, len(x), batch_size):
            self.encoder.encode(Tensor(x[i:i + batch_size]))
        self.train(was)


def _hidden(width):
    if width is None:
        return (512, 512)
    return (width, width) if isinstance(width, int) else tuple(width)


METRIC_COLUMNS = ("step", "global_loss", "local_loss", "prior_d_loss", "prior_e_loss",
                  "abs_coord_loss", "rel_coord_loss", "lr")


class NonFiniteLossError(FloatingPointError):
    pass


def dim_train_step(model: DimModel, batch, optimizers, rng: np.random.Generator,
                   negatives: NegativeSamplingConfig | None = None, mask=None) -> dict:
    """One discriminator update for the prior, then one joint update of everything else.

    ``mask`` overrides occlusion sampling (an all-ones mask means no occlusion).
    Inactive terms are reported as NaN.
    """
    from .auxiliary import abs_coord_loss, occluded_global_encode, rel_coord_loss, sample_occlusion_masks

    h = model.h
    main_opt, prior_opt = optimizers
    x = _as_tensor(batch)
    metrics = {k: math.nan for k in METRIC_COLUMNS}
    metrics["step"] = main_opt.step_count
    metrics["lr"] = main_opt.lr
    enc = model.encoder
    local = enc.local_features(x)
    if h.occlude or mask is not None:
        if mask is None:
            mask = sample_occlusion_masks(rng, x.shape[0], x.shape[2:], block=enc.image_size // enc.M)
        glob = occluded_global_encode(enc, x, mask, local=local)
    else:
        glob = enc.global_features(local)

    if h.gamma > 0:
        prior = model.prior_disc.cfg.sample(rng, x.shape[0])
        d_loss, _ = prior_match_losses(model.prior_disc, glob, rng, prior)
        _check_finite("prior_d_loss", d_loss, metrics)
        prior_opt.zero_grad()
        T.backward(d_loss)
        prior_opt.step()
        metrics["prior_d_loss"] = d_loss.item()

    parts = {}
    if h.alpha > 0:
        parts["global"] = mi_term(model.global_scorer, flatten_local(local), glob, h.estimator, negatives, rng)
    if h.beta > 0:
        parts["local"] = mi_term(model.local_scorer, local, glob, h.estimator, negatives, rng)
    if h.gamma > 0:
        # fresh discriminator pass after its update
        _, parts["prior_e"] = prior_match_losses(model.prior_disc, glob, rng, prior)
    if h.abs_coord > 0:
        parts["abs_coord"] = abs_coord_loss(model.abs_coord, glob, local)
    if h.rel_coord > 0:
        parts["rel_coord"] = rel_coord_loss(model.rel_coord, glob, local, rng)
    names = {"global": "global_loss", "local": "local_loss", "prior_e": "prior_e_loss",
             "abs_coord": "abs_coord_loss", "rel_coord": "rel_coord_loss"}
    for k, v in parts.items():
        _check_finite(names[k], v, metrics)
        metrics[names[k]] = v.item()
    loss = total_loss(h, parts)
    main_opt.zero_grad()
    T.backward(loss)
    main_opt.step()
    return metrics


def _check_finite(name: str, value: Tensor, metrics: dict) -> None:
    v = value.item()
    if not math.isfinite(v):
        raise NonFiniteLossError(f"{name} is {v} at step {metrics['step']}; partial metrics {metrics}")


def train_dim(model: DimModel, images: np.ndarray, steps: int, batch_size: int = 64, lr: float = 1e-4,
              schedule=None, rng=None, negatives=None, callback=None, prior_lr: float | None = None,
              betas=(0.9, 0.999)) -> list[dict]:
    """Run ``steps`` training steps on minibatches drawn from ``images``; returns metric rows."""
    rng = rng if rng is not None else np.random.default_rng()
    opts = model.make_optimizers(lr, schedule, prior_lr, betas)
    model.train()
    images = np.asarray(images, dtype=np.float32)
    rows = []
    for _ in range(steps):
        idx = rng.choice(len(images), size=min(batch_size, len(images)), replace=False)
        m = dim_train_step(model, images[idx], opts, rng, negatives)
        rows.append(m)
        if callback is not None:
            callback(m)
    return rows

