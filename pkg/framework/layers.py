from __future__ import annotations

import math

import numpy as np

from framework import ops
from framework.module import Module, Parameter, RngState
from framework.tensor import Tensor


class Linear(Module):
    """``y = x W + b`` over the last extent; weights drawn from U(-1/sqrt(d_in), 1/sqrt(d_in))."""

    def __init__(self, d_in: int, d_out: int, rng: RngState, bias: bool = True, zero_init: bool = False):
        bound = 1.0 / math.sqrt(d_in)
        weight = np.zeros((d_in, d_out)) if zero_init else rng.uniform(-bound, bound, (d_in, d_out))
        self.weight = Parameter(weight)
        self.bias = Parameter(np.zeros(d_out) if zero_init else rng.uniform(-bound, bound, (d_out,))) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    """Zero-padded convolution; ``padding`` defaults to ``kernel // 2`` (shape-preserving for odd kernels)."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        rng: RngState,
        stride: int = 1,
        padding: int | None = None,
        groups: int = 1,
        bias: bool = True,
        zero_init: bool = False,
    ):
        fan_in = (c_in // groups) * kernel * kernel
        bound = 1.0 / math.sqrt(fan_in)
        shape = (c_out, c_in // groups, kernel, kernel)
        self.weight = Parameter(np.zeros(shape) if zero_init else rng.uniform(-bound, bound, shape))
        self.bias = Parameter(np.zeros(c_out) if zero_init else rng.uniform(-bound, bound, (c_out,))) if bias else None
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding, groups=self.groups)


class LayerNorm(Module):
    """Normalizes the last extent."""

    def __init__(self, dim: int, eps: float = ops.LAYER_NORM_EPS):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class ChannelLayerNorm(LayerNorm):
    """Normalizes the channel extent of (B, C, H, W) maps at every spatial position."""

    def forward(self, x: Tensor) -> Tensor:
        return ops.channel_layer_norm(x, self.gamma, self.beta, self.eps)
