"""Layers, parameter initialisation and the Adam optimizer."""

from __future__ import annotations

import math
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .serialization import load_checkpoint, save_checkpoint
from .tensor import Tensor


def _fans(shape: Sequence[int]) -> tuple[int, int]:
    if len(shape) == 1:
        return shape[0], shape[0]
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    return shape[1] * receptive, shape[0] * receptive


def init_params(shape, scheme="he", rng: np.random.Generator | None = None,
                dtype=np.float32) -> Tensor:
    """New trainable tensor.

    ``scheme`` is ``"he"`` (normal, std sqrt(2/fan_in)), ``"glorot"`` (uniform
    +-sqrt(6/(fan_in+fan_out))) or ``("uniform", a, b)``. Weight shapes follow
    the (out, in, *kernel) convention.
    """
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise ValueError(f"init_params needs positive extents (non-zero fan-in), got {shape}")
    rng = rng if rng is not None else np.random.default_rng()
    fan_in, fan_out = _fans(shape)
    if isinstance(scheme, (tuple, list)) and scheme[0] == "uniform":
        a, b = float(scheme[1]), float(scheme[2])
        data = np.full(shape, a) if a == b else rng.uniform(a, b, size=shape)
    elif scheme == "he":
        data = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
    elif scheme == "glorot":
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        data = rng.uniform(-lim, lim, size=shape)
    elif scheme == "zeros":
        data = np.zeros(shape)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return Tensor(data.astype(dtype), requires_grad=True)


class Module:
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Tensor, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, (Tensor, Module)):
                        yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, v in self._children():
            if isinstance(v, Tensor):
                if v.requires_grad:
                    yield prefix + name, v
            else:
                yield from v.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffers", ()):
            yield prefix + name, getattr(self, name)
        for name, v in self._children():
            if isinstance(v, Module):
                yield from v.named_buffers(prefix + name + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, v in self._children():
            if isinstance(v, Module):
                yield from v.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict:
        state = {n: p.data.copy() for n, p in self.named_parameters()}
        state.update({n: b.copy() for n, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict) -> None:
        targets = {n: p.data for n, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        missing = set(targets) - set(state)
        if missing:
            raise KeyError(f"state is missing {sorted(missing)}")
        for n, arr in targets.items():
            src = np.asarray(state[n])
            if src.shape != arr.shape:
                raise ValueError(f"{n}: shape {src.shape} != {arr.shape}")
            arr[...] = src

    def save(self, directory) -> None:
        save_checkpoint(directory, self.state_dict())

    def load(self, directory) -> None:
        self.load_state_dict(load_checkpoint(directory))


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng=None, init="he",
                 bias: bool = True, dtype=np.float32):
        self.in_features, self.out_features = in_features, out_features
        self.weight = init_params((out_features, in_features), init, rng, dtype)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"Linear({self.in_features}->{self.out_features}) got input {x.shape}")
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, stride: int = 1,
                 padding="valid", rng=None, init="he", bias: bool = True, dtype=np.float32):
        self.stride, self.padding = stride, padding
        self.kernel = init_params((out_channels, in_channels, kernel_size, kernel_size), init, rng, dtype)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.kernel, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    """Batch norm for (B, C) or (B, C, H, W) inputs."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        if not 0 < momentum < 1:
            raise ValueError("momentum must lie in (0, 1)")
        self.momentum, self.eps = momentum, eps
        self.gamma = Tensor(np.ones(num_features, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class ChannelLayerNorm(Module):
    """Per-location layer norm over the channel axis of an NCHW map."""

    def __init__(self, num_channels: int, eps: float = 1e-5, dtype=np.float32):
        self.eps = eps
        self.gamma = Tensor(np.ones(num_channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(num_channels, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return T.channel_layer_norm(x, self.gamma, self.beta, self.eps)


class Dropout(Module):
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""

    def __init__(self, rate: float = 0.1, rng=None):
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng()

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0:
            return x
        keep = self.rng.uniform(size=x.shape) >= self.rate
        return x * Tensor((keep / (1 - self.rate)).astype(x.dtype))


class ReLU(Module):
    def forward(self, x):
        return T.relu(x)


class Sigmoid(Module):
    def forward(self, x):
        return T.sigmoid(x)


class Flatten(Module):
    def forward(self, x):
        return T.reshape(x, (x.shape[0], -1))


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def __getitem__(self, i):
        return self.layers[i]

    def __len__(self):
        return len(self.layers)


def mlp(sizes: Sequence[int], rng, batchnorm: bool = False, dropout: float = 0.0,
        final_init="glorot", dtype=np.float32) -> Sequential:
    """ReLU MLP ``sizes[0] -> ... -> sizes[-1]``; He init inside, ``final_init`` on the output layer."""
    layers: list[Module] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        layers.append(Linear(a, b, rng, init=final_init if last else "he", dtype=dtype))
        if not last:
            if batchnorm:
                layers.append(BatchNorm(b, dtype=dtype))
            layers.append(ReLU())
            if dropout:
                layers.append(Dropout(dropout, rng))
    return Sequential(*layers)


# -- optimisation ---------------------------------------------------------------------

class ConstantLR:
    def __call__(self, lr0: float, step: int) -> float:
        return lr0

    def __repr__(self):
        return "constant"


class ExponentialDecay:
    """``lr0 * rate ** (step // interval)``."""

    def __init__(self, rate: float, interval: int):
        if not 0 < rate <= 1 or interval < 1:
            raise ValueError("decay rate must lie in (0, 1] and interval >= 1")
        self.rate, self.interval = rate, interval

    def __call__(self, lr0: float, step: int) -> float:
        return lr0 * self.rate ** (step // self.interval)

    def __repr__(self):
        return f"exponential(rate={self.rate}, interval={self.interval})"


class NonFiniteGradientError(FloatingPointError):
    pass


class Adam:
    """Adam with bias correction.

    ``step_count`` counts completed updates; the update that brings it from
    ``s`` to ``s + 1`` uses learning rate ``schedule(lr0, s)``.
    """

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 schedule=None):
        self.params = list(params)
        self.lr0 = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.schedule = schedule if schedule is not None else ConstantLR()
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    @property
    def lr(self) -> float:
        return self.schedule(self.lr0, self.step_count)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, grads=None) -> None:
        grads = [p.grad for p in self.params] if grads is None else list(grads)
        if len(grads) != len(self.params):
            raise ValueError("one gradient per parameter required")
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g.shape != p.shape:
                raise ValueError(f"gradient {i} has shape {g.shape}, parameter {p.shape}")
            if not np.isfinite(g).all():
                raise NonFiniteGradientError(
                    f"non-finite gradient for parameter {i} at step {self.step_count}; update skipped")
        lr = self.lr
        t = self.step_count + 1
        c1 = 1 - self.beta1 ** t
        c2 = 1 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            upd = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= upd.astype(p.dtype, copy=False)
        self.step_count = t
