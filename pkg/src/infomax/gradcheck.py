"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: list[float]
    tol: float
    checked: list[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.max_rel_error)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error, default=0.0)

    def __bool__(self) -> bool:
        return self.passed


def _scalar_value(out) -> float:
    if not isinstance(out, Tensor) or out.shape != ():
        shape = getattr(out, "shape", None)
        raise ValueError(f"grad_check needs a scalar Tensor from f, got shape {shape}")
    v = float(out.data)
    if not np.isfinite(v):
        raise FloatingPointError("f returned a non-finite value")
    return v


def numerical_gradient(f: Callable[[], Tensor], param: Tensor, eps: float = 1e-5,
                       indices: np.ndarray | None = None) -> np.ndarray:
    """Central differences of ``f()`` w.r.t. ``param`` (perturbed in place).

    Only the flat positions in ``indices`` are evaluated when given; others are 0.
    """
    flat = param.data.reshape(-1)
    out = np.zeros(flat.size, dtype=np.float64)
    idx = np.arange(flat.size) if indices is None else indices
    for k in idx:
        orig = flat[k]
        flat[k] = orig + eps
        fp = _scalar_value(f())
        flat[k] = orig - eps
        fm = _scalar_value(f())
        flat[k] = orig
        out[k] = (fp - fm) / (2 * eps)
    return out.reshape(param.shape)


def relative_error(ad: np.ndarray, fd: np.ndarray) -> np.ndarray:
    ad = np.asarray(ad, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    return np.abs(ad - fd) / np.maximum(np.maximum(np.abs(ad), np.abs(fd)), 1e-8)


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               tol: float = 1e-5, max_elements: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare tape gradients of scalar ``f()`` against central finite differences.

    ``f`` must be deterministic; it is re-evaluated twice per checked element.
    With ``max_elements`` set, each parameter is checked on a random subset of
    that many flat positions drawn from ``rng``.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = f()
    _scalar_value(out)
    backward(out)
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    rng = rng if rng is not None else np.random.default_rng(0)
    errors, checked = [], []
    for p, ad in zip(params, analytic):
        if max_elements is not None and p.size > max_elements:
            idx = np.sort(rng.choice(p.size, size=max_elements, replace=False))
        else:
            idx = np.arange(p.size)
        fd = numerical_gradient(f, p, eps, idx)
        err = relative_error(ad.reshape(-1)[idx], fd.reshape(-1)[idx])
        errors.append(float(err.max(initial=0.0)))
        checked.append(len(idx))
    return GradCheckReport(errors, tol, checked)
