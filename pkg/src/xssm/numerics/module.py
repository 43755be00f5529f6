"""Parameter containers and default initializers."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .ops import channel_linear, conv2d, dwconv2d, layer_norm, linear
from .tensor import Tensor, default_dtype


def param(arr: np.ndarray, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(arr, dtype=default_dtype()), requires_grad=True, name=name)


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    # fan-in Kaiming-uniform with a=sqrt(5), i.e. bound 1/sqrt(fan_in)
    bound = 1.0 / np.sqrt(fan_in)
    return param(rng.uniform(-bound, bound, size=shape))


def zeros(shape) -> Tensor:
    return param(np.zeros(shape))


def ones(shape) -> Tensor:
    return param(np.ones(shape))


class Module:
    """Walks attributes to find parameters (Tensors with requires_grad) and submodules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def modules(self) -> Iterator["Module"]:
        """This module and every submodule, depth first."""
        yield self
        for val in vars(self).values():
            items = val if isinstance(val, (list, tuple)) else (val,)
            for item in items:
                if isinstance(item, Module):
                    yield from item.modules()

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        extra = state.keys() - own.keys()
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)}, unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        self.weight = ones((channels,))
        self.bias = zeros((channels,))
        self.eps = eps

    def forward(self, x: Tensor, axis: int = 1) -> Tensor:
        return layer_norm(x, self.weight, self.bias, self.eps, axis=axis)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, cin: int, cout: int, bias: bool = True):
        self.weight = kaiming_uniform(rng, (cout, cin), cin)
        self.bias = zeros((cout,)) if bias else None

    def forward(self, x: Tensor, axis: int = -1) -> Tensor:
        # axis=1 maps the channels of an NCHW tensor
        if axis == 1:
            return channel_linear(x, self.weight, self.bias)
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, rng: np.random.Generator, cin: int, cout: int, ksize: int = 3,
                 stride: int = 1, bias: bool = True):
        self.weight = kaiming_uniform(rng, (cout, cin, ksize, ksize), cin * ksize * ksize)
        self.bias = zeros((cout,)) if bias else None
        self.stride = stride
        self.padding = ksize // 2

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class DWConv2d(Module):
    def __init__(self, rng: np.random.Generator, channels: int, ksize: int = 3, bias: bool = True):
        self.weight = kaiming_uniform(rng, (channels, 1, ksize, ksize), ksize * ksize)
        self.bias = zeros((channels,)) if bias else None
        self.padding = ksize // 2

    def forward(self, x: Tensor) -> Tensor:
        return dwconv2d(x, self.weight, self.bias, padding=self.padding)
