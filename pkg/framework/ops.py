"""Neural-network primitives on :class:`Tensor`.

Images are ``(B, C, H, W)`` and sequences ``(B, L, D)``, row-major.
"""
from __future__ import annotations

from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from framework.errors import ConfigError, DimensionError
from framework.tensor import Function, Tensor

ActivationKind = Literal["silu", "sigmoid", "softmax", "softplus"]
ResampleFactor = Literal["down2", "up2"]
ResampleMode = Literal["area_mean", "nearest"]

LAYER_NORM_EPS = 1e-5
EXPREL_LIMIT = 1e-8


class _Linear(Function):
    def forward(self, x, weight, bias=None):
        self.x, self.weight, self.has_bias = x, weight, bias is not None
        out = np.matmul(x, weight)
        return out + bias if bias is not None else out

    def backward(self, grad):
        d_in, d_out = self.weight.shape
        flat_x = self.x.reshape(-1, d_in)
        flat_g = grad.reshape(-1, d_out)
        grads = [grad @ self.weight.T, flat_x.T @ flat_g]
        if self.has_bias:
            grads.append(flat_g.sum(axis=0))
        return tuple(grads)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input shape {x.shape} does not match weight shape {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias shape {bias.shape} does not match weight shape {weight.shape}")
    if bias is None:
        return _Linear.apply(x, weight)
    return _Linear.apply(x, weight, bias)


class _Conv2d(Function):
    def forward(self, x, weight, bias=None, stride=1, padding=0, depthwise=False):
        k = weight.shape[-1]
        self.x_shape, self.weight, self.has_bias = x.shape, weight, bias is not None
        self.stride, self.padding, self.depthwise = stride, padding, depthwise
        padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        self.padded_shape = padded.shape
        self.windows = sliding_window_view(padded, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        if depthwise:
            out = np.einsum("bchwij,cij->bchw", self.windows, weight[:, 0], optimize=True)
        else:
            out = np.einsum("bchwij,ocij->bohw", self.windows, weight, optimize=True)
        if bias is not None:
            out = out + bias[None, :, None, None]
        return out

    def backward(self, grad):
        k, s, p = self.weight.shape[-1], self.stride, self.padding
        out_h, out_w = grad.shape[2], grad.shape[3]
        if self.depthwise:
            grad_w = np.einsum("bchw,bchwij->cij", grad, self.windows, optimize=True)[:, None]
        else:
            grad_w = np.einsum("bohw,bchwij->ocij", grad, self.windows, optimize=True)
        grad_padded = np.zeros(self.padded_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                if self.depthwise:
                    contribution = grad * self.weight[:, 0, i, j][None, :, None, None]
                else:
                    contribution = np.einsum("bohw,oc->bchw", grad, self.weight[:, :, i, j], optimize=True)
                grad_padded[:, :, i : i + s * out_h : s, j : j + s * out_w : s] += contribution
        height, width = self.x_shape[2], self.x_shape[3]
        grad_x = grad_padded[:, :, p : p + height, p : p + width]
        grads = [grad_x, grad_w]
        if self.has_bias:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return tuple(grads)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Cross-correlation with zero padding; ``groups`` is 1 (dense) or C (depthwise)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape} and {weight.shape}")
    c_out, c_in_per_group, kh, kw = weight.shape
    if kh != kw:
        raise ConfigError(f"conv2d supports square kernels only, got {kh}x{kw}")
    channels, height, width = x.shape[1], x.shape[2], x.shape[3]
    if channels != c_in_per_group * groups:
        raise DimensionError(f"conv2d: input shape {x.shape} does not match kernel shape {weight.shape} (groups={groups})")
    depthwise = groups != 1
    if depthwise and not (groups == channels == c_out and c_in_per_group == 1):
        raise ConfigError(f"conv2d supports groups=1 or depthwise groups=C, got groups={groups} for kernel {weight.shape}")
    for extent in (height, width):
        span = extent + 2 * padding - kh
        if span < 0 or span % stride:
            raise ConfigError(
                f"conv2d output extent ({extent}+2*{padding}-{kh})/{stride}+1 is not a positive integer"
            )
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _Conv2d.apply(*inputs, stride=stride, padding=padding, depthwise=depthwise)


class _LayerNorm(Function):
    def forward(self, x, gamma, beta, eps):
        mean = x.mean(axis=-1, keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.normalized = centered * self.inv_std
        self.gamma = gamma
        return self.normalized * gamma + beta

    def backward(self, grad):
        d = self.normalized.shape[-1]
        lead = tuple(range(grad.ndim - 1))
        grad_gamma = (grad * self.normalized).sum(axis=lead)
        grad_beta = grad.sum(axis=lead)
        g_hat = grad * self.gamma
        grad_x = self.inv_std * (
            g_hat
            - g_hat.sum(axis=-1, keepdims=True) / d
            - self.normalized * (g_hat * self.normalized).sum(axis=-1, keepdims=True) / d
        )
        return grad_x, grad_gamma, grad_beta


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last extent."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: input shape {x.shape} needs gamma/beta of shape ({d},), got {gamma.shape}/{beta.shape}")
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    return _LayerNorm.apply(x, gamma, beta, eps=eps)


def channel_layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """LayerNorm over the channel extent of a (B, C, H, W) map at every position."""
    channels_last = x.transpose((0, 2, 3, 1))
    return layer_norm(channels_last, gamma, beta, eps).transpose((0, 3, 1, 2))


class _SiLU(Function):
    def forward(self, x):
        self.x = x
        self.sig = special.expit(x)
        return x * self.sig

    def backward(self, grad):
        return (grad * self.sig * (1.0 + self.x * (1.0 - self.sig)),)


class _Sigmoid(Function):
    def forward(self, x):
        self.out = special.expit(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class _Softplus(Function):
    def forward(self, x):
        self.x = x
        return np.logaddexp(0.0, x)

    def backward(self, grad):
        return (grad * special.expit(self.x),)


class _Softmax(Function):
    def forward(self, x):
        self.out = special.softmax(x, axis=-1)
        return self.out

    def backward(self, grad):
        inner = (grad * self.out).sum(axis=-1, keepdims=True)
        return (self.out * (grad - inner),)


_ACTIVATIONS: dict[str, type[Function]] = {
    "silu": _SiLU,
    "sigmoid": _Sigmoid,
    "softplus": _Softplus,
    "softmax": _Softmax,
}


def activation(x: Tensor, kind: ActivationKind) -> Tensor:
    """Elementwise activation; softmax normalizes over the last extent."""
    try:
        op = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return op.apply(x)


def silu(x: Tensor) -> Tensor:
    return _SiLU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return _Sigmoid.apply(x)


def softplus(x: Tensor) -> Tensor:
    return _Softplus.apply(x)


def softmax(x: Tensor) -> Tensor:
    return _Softmax.apply(x)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects (B, C, H, W), got {x.shape}")
    return x.mean(axis=(2, 3), keepdims=True)


class _AreaDown2(Function):
    def forward(self, x):
        b, c, h, w = x.shape
        return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(self, grad):
        return (np.repeat(np.repeat(grad, 2, axis=2), 2, axis=3) / 4.0,)


class _NearestDown2(Function):
    def forward(self, x):
        self.shape, self.dtype = x.shape, x.dtype
        return x[:, :, ::2, ::2]

    def backward(self, grad):
        full = np.zeros(self.shape, dtype=self.dtype)
        full[:, :, ::2, ::2] = grad
        return (full,)


class _NearestUp2(Function):
    def forward(self, x):
        return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)

    def backward(self, grad):
        b, c, h, w = grad.shape
        return (grad.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)),)


def resample(x: Tensor, factor: ResampleFactor, mode: ResampleMode = "area_mean") -> Tensor:
    """Halve or double the spatial extents of a (B, C, H, W) map."""
    if x.ndim != 4:
        raise DimensionError(f"resample expects (B, C, H, W), got {x.shape}")
    if factor == "down2":
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ConfigError(f"down2 resampling needs even extents, got {x.shape[2]}x{x.shape[3]}")
        if mode == "area_mean":
            return _AreaDown2.apply(x)
        if mode == "nearest":
            return _NearestDown2.apply(x)
    elif factor == "up2":
        if mode == "nearest":
            return _NearestUp2.apply(x)
    raise ConfigError(f"unsupported resample combination factor={factor!r} mode={mode!r}")


def pyramid(x: Tensor, levels: int = 3) -> list[Tensor]:
    """Area-mean pyramid ``[x, x/2, x/4, ...]``."""
    maps = [x]
    for _ in range(levels - 1):
        maps.append(resample(maps[-1], "down2", "area_mean"))
    return maps


class _Exprel(Function):
    def forward(self, z):
        self.z = z
        return np.where(np.abs(z) < EXPREL_LIMIT, 1.0, special.exprel(z)).astype(z.dtype, copy=False)

    def backward(self, grad):
        z = self.z
        small = np.abs(z) < 1e-5
        safe = np.where(small, 1.0, z)
        slope = np.where(small, 0.5 + z / 3.0, (np.exp(safe) - special.exprel(safe)) / safe)
        return (grad * slope,)


def exprel(z: Tensor) -> Tensor:
    """(e^z - 1) / z, exactly 1 when |z| < 1e-8."""
    return _Exprel.apply(z)
