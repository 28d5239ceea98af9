"""First-order linear recurrences ``h_t = a_t * h_{t-1} + b_t`` along axis 1.

Two kernels compute the same thing: a left-to-right loop and a work-efficient
(Blelloch up-sweep/down-sweep) prefix scan over the affine maps ``h -> a*h + b``.
"""
from __future__ import annotations

from typing import Literal

import numpy as np

from framework.errors import ConfigError, DimensionError
from framework.tensor import Function, Tensor

Evaluator = Literal["sequential", "parallel"]
EVALUATORS: tuple[str, ...] = ("sequential", "parallel")


def compose(later: tuple[np.ndarray, np.ndarray], earlier: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """``later ∘ earlier`` for affine maps stored as (a, b)."""
    a2, b2 = later
    a1, b1 = earlier
    return a2 * a1, a2 * b1 + b2


def scan_loop(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    h = np.empty_like(b)
    state = np.zeros_like(b[:, 0])
    for t in range(b.shape[1]):
        state = a[:, t] * state + b[:, t]
        h[:, t] = state
    return h


def scan_blelloch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    length = b.shape[1]
    if length == 1:
        return b.copy()
    size = 1 << (length - 1).bit_length()
    pad = [(0, 0)] * b.ndim
    pad[1] = (0, size - length)
    sa = np.pad(a, pad, constant_values=1.0)
    sb = np.pad(b, pad, constant_values=0.0)

    stride = 1
    while stride < size:
        right, left = slice(2 * stride - 1, size, 2 * stride), slice(stride - 1, size, 2 * stride)
        sb[:, right] = sa[:, right] * sb[:, left] + sb[:, right]
        sa[:, right] = sa[:, right] * sa[:, left]
        stride *= 2

    sa[:, -1] = 1.0
    sb[:, -1] = 0.0
    stride = size // 2
    while stride >= 1:
        right, left = slice(2 * stride - 1, size, 2 * stride), slice(stride - 1, size, 2 * stride)
        left_a, left_b = sa[:, left].copy(), sb[:, left].copy()
        prefix_a, prefix_b = sa[:, right].copy(), sb[:, right].copy()
        sa[:, left], sb[:, left] = prefix_a, prefix_b
        sa[:, right], sb[:, right] = compose((left_a, left_b), (prefix_a, prefix_b))
        stride //= 2

    # sb now holds the exclusive prefix h_{t-1}
    return a * sb[:, :length] + b


KERNELS = {"sequential": scan_loop, "parallel": scan_blelloch}


def run_kernel(a: np.ndarray, b: np.ndarray, evaluator: Evaluator) -> np.ndarray:
    try:
        kernel = KERNELS[evaluator]
    except KeyError:
        raise ConfigError(f"unknown evaluator {evaluator!r}; expected one of {list(EVALUATORS)}") from None
    if a.shape != b.shape:
        raise DimensionError(f"recurrence coefficients {a.shape} and inputs {b.shape} differ in shape")
    if b.ndim < 2:
        raise DimensionError(f"recurrence needs a (batch, length, ...) layout, got {b.shape}")
    return kernel(a, b)


class LinearRecurrence(Function):
    def forward(self, a, b, evaluator="parallel"):
        self.a, self.evaluator = a, evaluator
        self.h = run_kernel(a, b, evaluator)
        return self.h

    def backward(self, grad):
        # g_t = dh_t + a_{t+1} g_{t+1}, a reverse recurrence with shifted coefficients
        shifted = np.zeros_like(self.a)
        shifted[:, :-1] = self.a[:, 1:]
        g = np.flip(run_kernel(np.flip(shifted, axis=1), np.flip(grad, axis=1), self.evaluator), axis=1)
        h_prev = np.zeros_like(self.h)
        h_prev[:, 1:] = self.h[:, :-1]
        return g * h_prev, g


def linear_recurrence(a: Tensor, b: Tensor, evaluator: Evaluator = "parallel") -> Tensor:
    return LinearRecurrence.apply(a, b, evaluator=evaluator)
