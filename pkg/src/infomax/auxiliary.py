"""Occluded-input global features and coordinate-prediction objectives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor


@dataclass
class OcclusionMask:
    """Binary pixel mask (1 = visible) over an H x W input, built from aligned blocks."""

    mask: np.ndarray
    block: int

    def blocks(self) -> np.ndarray:
        """(gh, gw, block, block) view of the aligned blocks."""
        H, W = self.mask.shape
        b = self.block
        return self.mask[:H - H % b, :W - W % b].reshape(H // b, b, W // b, b).swapaxes(1, 2)

    def fully_visible(self) -> np.ndarray:
        return self.blocks().reshape(*self.blocks().shape[:2], -1).min(axis=2) == 1

    def fully_occluded(self) -> np.ndarray:
        return self.blocks().reshape(*self.blocks().shape[:2], -1).max(axis=2) == 0

    def is_valid(self) -> bool:
        return bool(self.fully_visible().any() and self.fully_occluded().any())


def sample_occlusion_mask(rng: np.random.Generator, shape, block: int = 4) -> OcclusionMask:
    """One block forced occluded, another forced visible, the rest occluded with probability 1/2."""
    H, W = int(shape[-2]), int(shape[-1])
    gh, gw = H // block, W // block
    n = gh * gw
    if n < 2:
        raise ValueError(f"input {H}x{W} holds fewer than two {block}x{block} blocks")
    visible = rng.uniform(size=n) >= 0.5
    hidden_idx, shown_idx = rng.choice(n, size=2, replace=False)
    visible[hidden_idx] = False
    visible[shown_idx] = True
    grid = np.repeat(np.repeat(visible.reshape(gh, gw), block, 0), block, 1)
    mask = np.ones((H, W), dtype=np.float32)
    mask[:gh * block, :gw * block] = grid
    return OcclusionMask(mask, block)


def sample_occlusion_masks(rng: np.random.Generator, batch: int, shape, block: int = 4) -> np.ndarray:
    """Independent masks for a batch, shaped (B, 1, H, W)."""
    return np.stack([sample_occlusion_mask(rng, shape, block).mask for _ in range(batch)])[:, None]


def occluded_global_encode(enc, x: Tensor, mask, local: Tensor | None = None) -> Tensor:
    """Global feature of ``x * mask``; the local map for scoring stays unoccluded.

    An all-ones mask takes the unoccluded path (reusing ``local`` when given),
    so the result is bit-identical to the plain encoder.
    """
    m = mask.mask if isinstance(mask, OcclusionMask) else np.asarray(mask)
    try:
        m = np.broadcast_to(m, x.shape[:1] + (1,) + x.shape[2:])
    except ValueError:
        raise ValueError(f"mask {np.shape(mask)} does not fit input {x.shape}") from None
    if not np.isin(m, (0, 1)).all():
        raise ValueError("occlusion mask must be binary")
    if m.all():
        return enc.global_features(local if local is not None else enc.local_features(x))
    if not m.reshape(m.shape[0], -1).any(axis=1).all():
        raise ValueError("occlusion mask hides the whole input")
    full = np.broadcast_to(m, x.shape).astype(x.dtype)
    return enc.global_features(enc.local_features(x * Tensor(full)))


class CoordPredictor(nn.Module):
    """MLP (BN, ReLU) with two categorical heads for row and column.

    Absolute mode predicts (i, j) from ``[E; c_(i,j)]`` with M-way heads;
    relative mode predicts the offset from ``[E; c_src; c_tgt]`` with
    (2M-1)-way heads. Heads start at zero so every prediction is uniform.
    """

    def __init__(self, global_dim: int, local_dim: int, M: int, hidden=(512, 512),
                 relative: bool = False, rng=None, dtype=np.float32):
        self.M, self.relative = M, relative
        self.n_out = 2 * M - 1 if relative else M
        d_in = global_dim + local_dim * (2 if relative else 1)
        self.body = nn.mlp([d_in, *hidden], rng, batchnorm=True, final_init="he", dtype=dtype)
        # the mlp's last layer is linear; finish the hidden block with BN + ReLU
        self.body.layers += [nn.BatchNorm(hidden[-1], dtype=dtype), nn.ReLU()]
        self.row_head = nn.Linear(hidden[-1], self.n_out, rng, init="zeros", dtype=dtype)
        self.col_head = nn.Linear(hidden[-1], self.n_out, rng, init="zeros", dtype=dtype)

    def forward(self, inputs: Tensor) -> tuple[Tensor, Tensor]:
        h = self.body(inputs)
        return self.row_head(h), self.col_head(h)

    def probabilities(self, inputs: Tensor) -> tuple[np.ndarray, np.ndarray]:
        out = []
        for logits in self(inputs):
            z = logits.data - logits.data.max(axis=1, keepdims=True)
            p = np.exp(z)
            out.append(p / p.sum(axis=1, keepdims=True))
        return out[0], out[1]


def _locations(local: Tensor) -> Tensor:
    """(B, d, M, M) -> (B, M*M, d), row-major over (i, j)."""
    B, d, H, W = local.shape
    return T.reshape(T.transpose(local, (0, 2, 3, 1)), (B, H * W, d))


def _tile_global(glob: Tensor, n: int) -> Tensor:
    B, g = glob.shape
    return T.reshape(T.broadcast_to(T.reshape(glob, (B, 1, g)), (B, n, g)), (B * n, g))


def abs_coord_loss(pred: CoordPredictor, glob: Tensor, local: Tensor, coords=None) -> Tensor:
    """Row + column cross-entropy of absolute positions.

    With ``coords=None`` the loss is averaged over every location of every
    map; otherwise ``coords`` is a (B, 2) array naming one location per image.
    """
    B, d, M, _ = local.shape
    if M != pred.M or pred.relative:
        raise ValueError("predictor does not match this absolute-coordinate task")
    locs = _locations(local)
    if coords is None:
        ii, jj = np.divmod(np.tile(np.arange(M * M), B), M)
        feats = T.reshape(locs, (B * M * M, d))
        g = _tile_global(glob, M * M)
    else:
        coords = np.asarray(coords)
        if coords.shape != (B, 2) or coords.min() < 0 or coords.max() >= M:
            raise ValueError(f"coordinates must be a (B, 2) array inside [0, {M})")
        ii, jj = coords[:, 0], coords[:, 1]
        feats = T.take(locs, (np.arange(B), ii * M + jj))
        g = glob
    rows, cols = pred(T.concat([g, feats], axis=1))
    return T.softmax_cross_entropy(rows, ii) + T.softmax_cross_entropy(cols, jj)


def rel_coord_loss(pred: CoordPredictor, glob: Tensor, local: Tensor, rng=None, sources=None) -> Tensor:
    """Cross-entropy of the offset (i - i', j - j') from one source to every target.

    One source location per image (``sources`` as flat indices, else drawn
    from ``rng``); the loss is averaged over all M*M targets.
    """
    B, d, M, _ = local.shape
    if M != pred.M or not pred.relative:
        raise ValueError("predictor does not match this relative-coordinate task")
    if sources is None:
        rng = rng if rng is not None else np.random.default_rng()
        sources = rng.integers(0, M * M, size=B)
    sources = np.asarray(sources)
    if sources.shape != (B,) or sources.min() < 0 or sources.max() >= M * M:
        raise ValueError(f"sources must be {B} flat indices in [0, {M * M})")
    n = M * M
    locs = _locations(local)
    src = T.take(locs, (np.arange(B), sources))
    src = _tile_global(src, n)
    tgt = T.reshape(locs, (B * n, d))
    si, sj = np.divmod(np.repeat(sources, n), M)
    ti, tj = np.divmod(np.tile(np.arange(n), B), M)
    rows, cols = pred(T.concat([_tile_global(glob, n), src, tgt], axis=1))
    return (T.softmax_cross_entropy(rows, si - ti + M - 1)
            + T.softmax_cross_entropy(cols, sj - tj + M - 1))


def uniform_baseline(M: int, relative: bool = False) -> float:
    return 2 * math.log(2 * M - 1 if relative else M)
