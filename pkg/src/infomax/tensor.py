"""Dense numpy-backed tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor`. When any input requires a gradient the
result records its parents and a backward closure; :func:`backward` walks the
recorded graph in reverse creation order, which is always a valid reverse
topological order because a node can only be created after its inputs.

Implicit broadcasting is limited to two cases: equal shapes, or one operand a
scalar (shape ``()``). Anything else must go through :func:`broadcast_to`.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_node_ids = itertools.count(1)


class Tensor:
    """A float32/float64 array plus an optional handle into the autodiff graph."""

    __slots__ = ("data", "requires_grad", "node", "op", "_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype not in _DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node = next(_node_ids) if requires_grad else None
        self.op = "leaf"
        self._grad = None
        self._parents = None
        self._backward = None

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _result(cls, data: np.ndarray, parents: tuple, backward: Callable, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.op = op
        out._grad = None
        track = any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out.node = next(_node_ids)
            out._parents = parents
            out._backward = backward
        else:
            out.node = None
            out._parents = None
            out._backward = None
        return out

    # -- properties -----------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = None if value is None else np.asarray(value, dtype=self.data.dtype)

    @property
    def is_leaf(self) -> bool:
        return self._parents is None

    def zero_grad(self) -> None:
        self._grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def backward(self) -> dict:
        return backward(self)

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce("mean", self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def tensor(data, dtype=None, requires_grad: bool = False) -> Tensor:
    return Tensor(data, dtype=dtype, requires_grad=requires_grad)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _finite(data: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(data).all():
        raise FloatingPointError(f"{op} produced non-finite values")
    return data


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        b = _as_tensor(b, a)
    else:
        a = _as_tensor(a, b)
    if a.dtype != b.dtype:
        raise TypeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ValueError(f"shapes {a.shape} and {b.shape} are not broadcast-compatible "
                         "(only equal shapes or scalar-vs-tensor)")
    return a, b


def _fit(g: np.ndarray, shape: tuple) -> np.ndarray:
    # undo the scalar-vs-tensor broadcast
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = _finite(a.data + b.data, "add")
    return Tensor._result(out, (a, b), lambda g: (_fit(g, a.shape), _fit(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = _finite(a.data - b.data, "sub")
    return Tensor._result(out, (a, b), lambda g: (_fit(g, a.shape), _fit(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = _finite(a.data * b.data, "mul")
    return Tensor._result(out, (a, b),
                          lambda g: (_fit(g * b.data, a.shape), _fit(g * a.data, b.shape)), "mul")


def neg(a: Tensor) -> Tensor:
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, 0).astype(a.dtype, copy=False)
    return Tensor._result(out, (a,), lambda g: (g * mask,), "relu")


def _softplus_np(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e)).astype(z.dtype, copy=False)


def softplus(a: Tensor) -> Tensor:
    out = _finite(_softplus_np(a.data), "softplus")
    return Tensor._result(out, (a,), lambda g: (g * _sigmoid_np(a.data),), "softplus")


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_np(a.data)
    return Tensor._result(s, (a,), lambda g: (g * s * (1 - s),), "sigmoid")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        e = _finite(np.exp(a.data), "exp")
    return Tensor._result(e, (a,), lambda g: (g * e,), "exp")


def log(a: Tensor) -> Tensor:
    if not (a.data > 0).all():
        raise ValueError("log requires strictly positive input")
    out = np.log(a.data)
    return Tensor._result(out, (a,), lambda g: (g / a.data,), "log")


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul,
    "relu": relu, "softplus": softplus, "sigmoid": sigmoid,
    "exp": exp, "log": log, "neg": neg,
}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch one of the named elementwise ops; binary kinds need ``b``."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    if kind in ("add", "sub", "mul"):
        if b is None:
            raise ValueError(f"{kind} needs two operands")
        return fn(a, b)
    return fn(_as_tensor(a))


# -- linear algebra --------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if a.dtype != b.dtype:
        raise TypeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    out = _finite(a.data @ b.data, "matmul")
    return Tensor._result(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``x`` of shape (B, in) and ``weight`` (out, in)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    _finite(out, "linear")

    def _back(g):
        gb = g.sum(axis=0) if bias is not None else None
        return (g @ weight.data, g.T @ x.data) + ((gb,) if bias is not None else ())

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, _back, "linear")


def _resolve_padding(padding, kh: int, kw: int) -> tuple[int, int, int, int]:
    if padding == "valid":
        return 0, 0, 0, 0
    if padding == "same":
        th, tw = kh - 1, kw - 1
        return th // 2, th - th // 2, tw // 2, tw - tw // 2
    if isinstance(padding, int) and padding >= 0:
        return padding, padding, padding, padding
    raise ValueError(f"padding must be 'valid', 'same' or a non-negative int, got {padding!r}")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding="valid") -> Tensor:
    """Direct 2-D cross-correlation over NCHW input with an OIHW kernel.

    The kernel is applied one tap at a time (``kh * kw`` channel contractions);
    no im2col buffer is built.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {x.shape}, {kernel.shape}")
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise ValueError("stride must be a positive int")
    B, cin, H, W = x.shape
    cout, kcin, kh, kw = kernel.shape
    if kcin != cin:
        raise ValueError(f"kernel expects {kcin} input channels, input has {cin}")
    pt, pb, pl, pr = _resolve_padding(padding, kh, kw)
    Hp, Wp = H + pt + pb, W + pl + pr
    if kh > Hp or kw > Wp:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x.data
    w = kernel.data

    def tap(i, j):
        return (slice(None), slice(None),
                slice(i, i + stride * (Ho - 1) + 1, stride),
                slice(j, j + stride * (Wo - 1) + 1, stride))

    acc = np.zeros((cout, B, Ho, Wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            acc += np.tensordot(w[:, :, i, j], xp[tap(i, j)], axes=([1], [1]))
    out = acc.transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    out = _finite(np.ascontiguousarray(out), "conv2d")

    def _back(g):
        go = g.transpose(1, 0, 2, 3)
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        for i in range(kh):
            for j in range(kw):
                sl = tap(i, j)
                gw[:, :, i, j] = np.tensordot(go, xp[sl], axes=([1, 2, 3], [0, 2, 3]))
                gxp[sl] += np.tensordot(w[:, :, i, j], go, axes=([0], [0])).transpose(1, 0, 2, 3)
        gx = gxp[:, :, pt:pt + H, pl:pl + W]
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor._result(out, parents, _back, "conv2d")


# -- reductions ------------------------------------------------------------------

def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, (int, np.integer)) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(out))


def _expand(g: np.ndarray, shape: tuple, axes, keepdims: bool) -> np.ndarray:
    if axes is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def reduce(kind: str, a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """sum / mean / logsumexp / max over ``axis`` (all axes when None)."""
    axes = _norm_axis(axis, a.ndim)
    count = a.size if axes is None else int(np.prod([a.shape[i] for i in axes]))
    if count == 0:
        raise ValueError("empty reduction")
    x = a.data
    if kind == "sum":
        out = x.sum(axis=axes, keepdims=keepdims)
        back = lambda g: (_expand(g, a.shape, axes, keepdims).copy(),)
    elif kind == "mean":
        out = x.mean(axis=axes, keepdims=keepdims)
        back = lambda g: (_expand(g / count, a.shape, axes, keepdims).copy(),)
    elif kind == "logsumexp":
        m = x.max(axis=axes, keepdims=True)
        e = np.exp(x - m)
        s = e.sum(axis=axes, keepdims=True)
        full = m + np.log(s)
        out = full if keepdims else (full.reshape(()) if axes is None else np.squeeze(full, axes))
        soft = e / s
        back = lambda g: (_expand(g, a.shape, axes, keepdims) * soft,)
    elif kind == "max":
        out = x.max(axis=axes, keepdims=keepdims)
        # first maximal index along the reduced axes gets the whole subgradient
        if axes is None:
            mask = np.zeros(x.size, dtype=bool)
            mask[np.argmax(x)] = True
            mask = mask.reshape(x.shape)
        else:
            keep = [i for i in range(x.ndim) if i not in axes]
            moved = np.transpose(x, keep + list(axes))
            flat = moved.reshape(moved.shape[:len(keep)] + (-1,))
            idx = np.argmax(flat, axis=-1)
            mflat = np.zeros(flat.shape, dtype=bool)
            np.put_along_axis(mflat, idx[..., None], True, axis=-1)
            mask = np.transpose(mflat.reshape(moved.shape), np.argsort(keep + list(axes)))
        back = lambda g: (_expand(g, a.shape, axes, keepdims) * mask,)
    else:
        raise ValueError(f"unknown reduction {kind!r}")
    out = _finite(np.asarray(out, dtype=a.dtype), kind)
    return Tensor._result(out, (a,), back, kind)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    return reduce("sum", a, axis, keepdims)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    return reduce("mean", a, axis, keepdims)


def logsumexp(a: Tensor, axis=None, keepdims=False) -> Tensor:
    return reduce("logsumexp", a, axis, keepdims)


def tmax(a: Tensor, axis=None, keepdims=False) -> Tensor:
    return reduce("max", a, axis, keepdims)


# -- shape manipulation -----------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return Tensor._result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return Tensor._result(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) != 1:
        raise TypeError(f"concat of mixed dtypes {dtypes}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor._result(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def take(a: Tensor, index) -> Tensor:
    """Numpy-style (fancy) indexing; the backward scatter-adds repeated picks."""
    out = a.data[index]
    if np.isscalar(out):
        out = np.asarray(out, dtype=a.dtype)
    full = (isinstance(index, tuple) and len(index) == a.ndim
            and all(isinstance(i, np.ndarray) and i.dtype.kind in "iu" for i in index))

    def _back(g):
        if full:
            # one index array per axis: bincount over flat positions beats np.add.at
            flat = np.ravel_multi_index(np.broadcast_arrays(*index), a.shape, mode="wrap")
            z = np.bincount(flat.ravel(), weights=g.ravel(), minlength=a.size)
            return (z.astype(a.dtype, copy=False).reshape(a.shape),)
        z = np.zeros_like(a.data)
        np.add.at(z, index, g)
        return (z,)

    return Tensor._result(out, (a,), _back, "take")


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Explicit numpy broadcast; the only way to broadcast beyond scalar-vs-tensor."""
    shape = tuple(shape)
    out = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    lead = len(shape) - a.ndim

    def _back(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(a.shape) if n == 1 and g.shape[i] != 1)
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return Tensor._result(out, (a,), _back, "broadcast_to")


# -- fused normalisation / loss ops --------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Batch normalisation over (B, C) or (B, C, H, W) input.

    Training mode normalises with the biased batch variance and updates the
    running buffers in place (unbiased variance); eval mode uses only the
    running buffers.
    """
    if x.ndim not in (2, 4):
        raise ValueError(f"batch_norm expects 2-D or 4-D input, got {x.shape}")
    C = x.shape[1]
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    view = (1, C) if x.ndim == 2 else (1, C, 1, 1)
    g_ = gamma.data.reshape(view)
    if training:
        if x.shape[0] < 2:
            raise ValueError("batch_norm in train mode needs batch size >= 2")
        n = x.size // C
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(C)
        running_var *= 1 - momentum
        running_var += momentum * var.reshape(C) * (n / (n - 1))
        out = g_ * xhat + beta.data.reshape(view)

        def _back(g):
            dxhat = g * g_
            dx = inv / n * (n * dxhat - dxhat.sum(axis=axes, keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
            return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        inv = 1.0 / np.sqrt(running_var.reshape(view) + eps)
        xhat = (x.data - running_mean.reshape(view)) * inv
        out = g_ * xhat + beta.data.reshape(view)

        def _back(g):
            return g * g_ * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = _finite(out.astype(x.dtype, copy=False), "batch_norm")
    return Tensor._result(out, (x, gamma, beta), _back, "batch_norm")


def channel_layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer norm across channels, independently at every spatial location of NCHW input."""
    if x.ndim != 4:
        raise ValueError(f"channel_layer_norm expects NCHW input, got {x.shape}")
    C = x.shape[1]
    view = (1, C, 1, 1)
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    g_ = gamma.data.reshape(view)
    out = _finite(g_ * xhat + beta.data.reshape(view), "channel_layer_norm")

    def _back(g):
        dxhat = g * g_
        dx = inv / C * (C * dxhat - dxhat.sum(axis=1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return Tensor._result(out, (x, gamma, beta), _back, "channel_layer_norm")


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean categorical cross-entropy of integer ``targets`` under ``softmax(logits)``."""
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} and targets {targets.shape} disagree")
    K = logits.shape[1]
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= K:
        raise ValueError(f"targets must lie in [0, {K})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(len(targets))
    n = len(targets)
    out = np.asarray(-logp[rows, targets].mean(), dtype=logits.dtype)

    def _back(g):
        p = np.exp(logp)
        p[rows, targets] -= 1
        return (p * (g / n),)

    return Tensor._result(_finite(out, "cross_entropy"), (logits,), _back, "cross_entropy")


def custom_op(data, parents: Sequence[Tensor], backward_fn: Callable, name: str = "custom") -> Tensor:
    """Record an arbitrary op; ``backward_fn(g)`` returns one gradient per parent."""
    return Tensor._result(np.asarray(data), tuple(parents), backward_fn, name)


# -- backward ------------------------------------------------------------------------

def _reachable(root: Tensor) -> list[Tensor]:
    seen = {id(root)}
    stack = [root]
    nodes = []
    while stack:
        t = stack.pop()
        nodes.append(t)
        if t._parents is not None:
            for p in t._parents:
                if p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
    nodes.sort(key=lambda t: t.node, reverse=True)
    return nodes


def backward(root: Tensor) -> dict:
    """Accumulate d(root)/d(leaf) into every reachable leaf's ``.grad``.

    Returns a mapping from each reached leaf tensor (including ``root`` itself
    when it is a leaf) to the gradient contributed by this call.
    """
    if root.shape != ():
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    grads = {id(root): np.ones((), dtype=root.dtype)}
    contributed = {}
    for t in _reachable(root):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._parents is None:
            t._grad = g.copy() if t._grad is None else t._grad + g
            contributed[t] = g
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg
    return contributed


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
