"""Parameterised layers with fan-in scaled uniform initialisation."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    def parameters(self) -> Iterator[Parameter]:
        for value in vars(self).values():
            if isinstance(value, Parameter):
                yield value


class Conv2d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, name: str = "conv"):
        bound = 1.0 / math.sqrt(in_channels * kernel_size * kernel_size)
        self.weight = Parameter(_uniform(rng, bound, (out_channels, in_channels, kernel_size, kernel_size)),
                                name=f"{name}.weight")
        self.bias = Parameter(np.zeros(out_channels), name=f"{name}.bias")
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2x2(Layer):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, name: str = "up"):
        # fan-in of each output position is in_channels (one tap per input channel)
        bound = 1.0 / math.sqrt(in_channels)
        self.weight = Parameter(_uniform(rng, bound, (in_channels, out_channels, 2, 2)), name=f"{name}.weight")
        self.bias = Parameter(np.zeros(out_channels), name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d_k2s2(x, self.weight, self.bias)


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, name: str = "fc"):
        bound = 1.0 / math.sqrt(in_features)
        self.weight = Parameter(_uniform(rng, bound, (out_features, in_features)), name=f"{name}.weight")
        self.bias = Parameter(np.zeros(out_features), name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)
