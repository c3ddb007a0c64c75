"""Seeded finite-difference cases for every differentiable op and both scorers.

Each case is ``(f, params)``: ``f()`` returns a scalar built from float64 leaves
so that :func:`infomax.gradcheck.grad_check` can compare tape gradients with
central differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dim import make_scorer
from .gradcheck import grad_check
from .tensor import Tensor


def leaf(arr, dtype=np.float64) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


def op_case(op: str, seed: int):
    """A random shape plus a scalar function of fresh float64 leaves for ``op``."""
    r = np.random.default_rng(seed)
    shape = tuple(r.integers(1, 5, size=r.integers(1, 4)))

    def away_from_zero(size):
        x = r.normal(size=size)
        return np.where(np.abs(x) < 0.1, 0.1 * np.sign(x) + 0.1 * (x == 0), x)

    a = leaf(r.normal(size=shape))
    proj = Tensor(r.normal(size=shape))
    if op in ("add", "sub", "mul"):
        b = leaf(r.normal(size=shape))
        return lambda: T.tsum(T.elementwise(op, a, b) * proj), [a, b]
    if op == "scalar_mul":
        s = leaf(r.normal())
        return lambda: T.tsum(a * s * proj), [a, s]
    if op == "relu":
        a = leaf(away_from_zero(shape))
        return lambda: T.tsum(T.relu(a) * proj), [a]
    if op == "log":
        a = leaf(r.uniform(0.5, 2.0, size=shape))
        return lambda: T.tsum(T.log(a) * proj), [a]
    if op in ("softplus", "sigmoid", "exp", "neg"):
        return lambda: T.tsum(T.elementwise(op, a) * proj), [a]
    if op in ("sum", "mean", "logsumexp", "max"):
        axis = int(r.integers(0, len(shape)))
        out_shape = shape[:axis] + shape[axis + 1:]
        p2 = Tensor(r.normal(size=out_shape))
        return lambda: T.tsum(T.reduce(op, a, axis) * p2), [a]
    if op == "matmul":
        m, k, n = r.integers(1, 6, size=3)
        x, y = leaf(r.normal(size=(m, k))), leaf(r.normal(size=(k, n)))
        p2 = Tensor(r.normal(size=(m, n)))
        return lambda: T.tsum(T.matmul(x, y) * p2), [x, y]
    if op == "conv2d":
        B, cin, cout = r.integers(1, 3), r.integers(1, 4), r.integers(1, 4)
        H = int(r.integers(4, 8))
        k, s = int(r.integers(1, 4)), int(r.integers(1, 3))
        pad = ["valid", "same"][int(r.integers(0, 2))]
        x, w = leaf(r.normal(size=(B, cin, H, H))), leaf(r.normal(size=(cout, cin, k, k)))
        bias = leaf(r.normal(size=cout))
        out_shape = T.conv2d(x, w, bias, s, pad).shape
        p2 = Tensor(r.normal(size=out_shape))
        return lambda: T.tsum(T.conv2d(x, w, bias, s, pad) * p2), [x, w, bias]
    if op == "batch_norm":
        B, C = int(r.integers(2, 6)), int(r.integers(1, 4))
        x = leaf(r.normal(size=(B, C, 2, 2)) if r.integers(0, 2) else r.normal(size=(B, C)))
        g, b = leaf(r.normal(size=C)), leaf(r.normal(size=C))
        p2 = Tensor(r.normal(size=x.shape))
        return (lambda: T.tsum(T.batch_norm(x, g, b, np.zeros(C), np.ones(C), True) * p2)), [x, g, b]
    if op == "channel_layer_norm":
        # two channels normalise to +-1 regardless of input: gradients vanish
        C = int(r.integers(3, 6))
        x = leaf(r.normal(size=(2, C, 3, 3)))
        g, b = leaf(r.normal(size=C)), leaf(r.normal(size=C))
        p2 = Tensor(r.normal(size=x.shape))
        return lambda: T.tsum(T.channel_layer_norm(x, g, b) * p2), [x, g, b]
    if op == "cross_entropy":
        N, K = int(r.integers(1, 6)), int(r.integers(2, 6))
        z = leaf(r.normal(size=(N, K)))
        y = r.integers(0, K, size=N)
        return lambda: T.softmax_cross_entropy(z, y), [z]
    if op == "take":
        idx = r.integers(0, shape[0], size=7)
        p2 = Tensor(r.normal(size=(7,) + shape[1:]))
        return lambda: T.tsum(T.take(a, idx) * p2), [a]
    if op == "concat":
        b = leaf(r.normal(size=shape))
        p2 = Tensor(r.normal(size=(2 * shape[0],) + shape[1:]))
        return lambda: T.tsum(T.concat([a, b], axis=0) * p2), [a, b]
    if op == "broadcast_to":
        b = leaf(r.normal(size=(1,) + shape[1:]))
        return lambda: T.tsum(T.broadcast_to(b, shape) * proj), [b]
    if op == "reshape_transpose":
        p2 = Tensor(r.normal(size=shape[::-1]))
        return lambda: T.tsum(T.transpose(T.reshape(a, shape)) * p2), [a]
    raise KeyError(op)



DIFFERENTIABLE_OPS = [
    "add", "sub", "mul", "scalar_mul", "relu", "softplus", "sigmoid", "exp", "log", "neg",
    "sum", "mean", "logsumexp", "max", "matmul", "conv2d", "batch_norm",
    "channel_layer_norm", "cross_entropy", "take", "concat", "broadcast_to", "reshape_transpose",
]


SCORER_KINDS = ("concat-convolve", "encode-dot")


def scorer_case(kind: str, seed: int):
    """Small float64 scorer on random (global, local) inputs, parameters jittered off the ReLU kinks."""
    r = np.random.default_rng(seed)
    B, g, d, M = int(r.integers(2, 4)), int(r.integers(2, 5)), int(r.integers(2, 5)), int(r.integers(1, 3))
    width = (6, 5) if kind == "concat-convolve" else 5
    scorer = make_scorer(kind, d, g, width, rng=r, dtype=np.float64)
    for p in scorer.parameters():
        p.data += r.normal(scale=0.3, size=p.shape)
    glob, local = leaf(r.normal(size=(B, g))), leaf(r.normal(size=(B, d, M, M)))
    proj = Tensor(r.normal(size=(B, B * M * M)))
    return lambda: T.tsum(scorer(glob, local) * proj), [glob, local] + scorer.parameters()


@dataclass(frozen=True)
class SuiteRow:
    target: str
    seed: int
    max_rel_error: float
    tol: float
    passed: bool


def run_suite(seeds: int = 20, tol: float = 1e-4, eps: float = 1e-6, targets=None) -> list[SuiteRow]:
    """Check every op and scorer over ``seeds`` seeded cases each."""
    targets = list(targets) if targets is not None else DIFFERENTIABLE_OPS + list(SCORER_KINDS)
    rows = []
    for name in targets:
        make = scorer_case if name in SCORER_KINDS else op_case
        for seed in range(seeds):
            f, params = make(name, seed)
            rep = grad_check(f, params, eps=eps, tol=tol)
            rows.append(SuiteRow(name, seed, rep.worst, tol, rep.passed))
    return rows
