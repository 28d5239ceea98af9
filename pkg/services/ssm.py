"""Selective state-space layer: input-dependent (Δ, B, C), zero-order-hold
discretization of a diagonal A, and the recurrence evaluated by either scan kernel.

Shapes: inputs are ``(B, L, D)`` sequences; the state has ``N`` entries per
channel, so discretized quantities are ``(B, L, D, N)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from framework import ops
from framework.errors import ConfigError, DimensionError, PreconditionError
from framework.layers import Linear
from framework.module import Module, Parameter, RngState
from framework.tensor import Tensor
from services.scan import EVALUATORS, Evaluator, linear_recurrence

DT_MIN = 1e-3
DT_MAX = 1e-1
DT_FLOOR = 1e-4


class SsmParams(Module):
    """Learned quantities of one selective SSM over ``d_inner`` channels and ``d_state`` states.

    ``A = -exp(log_A)`` starts log-spaced over [-1, -N]; the Δ bias starts so that
    ``softplus(bias)`` lies in [1e-3, 1e-1]; ``D_skip`` starts at 1.
    """

    def __init__(self, d_inner: int, d_state: int, rng: RngState, dt_rank: int = 1):
        if d_inner < 1 or d_state < 1 or dt_rank < 1:
            raise ConfigError(f"SSM extents must be positive, got D={d_inner} N={d_state} rank={dt_rank}")
        self.d_inner, self.d_state, self.dt_rank = d_inner, d_state, dt_rank
        self.log_A = Parameter(np.log(np.geomspace(1.0, d_state, d_state)))
        self.B_proj = Linear(d_inner, d_state, rng, bias=False)
        self.C_proj = Linear(d_inner, d_state, rng, bias=False)
        self.delta_down = Linear(d_inner, dt_rank, rng, bias=False)
        self.delta_up = Linear(dt_rank, d_inner, rng, bias=False)
        dt = np.exp(rng.uniform(math.log(DT_MIN), math.log(DT_MAX), (d_inner,)))
        dt = np.maximum(dt, DT_FLOOR)
        self.delta_bias = Parameter(dt + np.log(-np.expm1(-dt)))
        self.D_skip = Parameter(np.ones(d_inner))

    @property
    def A_diag(self) -> Tensor:
        return -self.log_A.exp()


@dataclass(frozen=True)
class DiscretizedParams:
    A_bar: Tensor
    B_bar: Tensor


def discretize(A_diag: Tensor, B: Tensor, delta: Tensor) -> DiscretizedParams:
    """Zero-order hold for diagonal A: ``Ā = exp(ΔA)``, ``B̄ = (e^{ΔA} - 1)/(ΔA) · Δ · B``.

    ``A_diag`` is ``(N,)``, ``B`` is ``(B, L, N)`` and ``delta`` is ``(B, L, D)``.
    """
    if np.any(delta.data <= 0):
        raise PreconditionError(f"discretize needs delta > 0, smallest value is {float(delta.data.min())}")
    if B.ndim != 3 or delta.ndim != 3 or B.shape[:2] != delta.shape[:2] or B.shape[2] != A_diag.shape[0]:
        raise DimensionError(
            f"discretize: A {A_diag.shape}, B {B.shape} and delta {delta.shape} are not (N,), (B,L,N), (B,L,D)"
        )
    batch, length, channels = delta.shape
    n = A_diag.shape[0]
    step = delta.reshape((batch, length, channels, 1))
    z = step * A_diag.reshape((1, 1, 1, n))
    delta_b = step * B.reshape((batch, length, 1, n))
    return DiscretizedParams(A_bar=z.exp(), B_bar=ops.exprel(z) * delta_b)


def selective_params(x: Tensor, params: SsmParams) -> tuple[Tensor, Tensor, Tensor]:
    """Per-position ``(Δ, B, C)``: ``Δ = softplus(up(down(x)) + bias)``, ``B = B_proj(x)``, ``C = C_proj(x)``."""
    if x.ndim != 3 or x.shape[-1] != params.d_inner:
        raise DimensionError(f"selective_params: input {x.shape} is not (B, L, {params.d_inner})")
    delta = ops.softplus(params.delta_up(params.delta_down(x)) + params.delta_bias)
    return delta, params.B_proj(x), params.C_proj(x)


def _scan(disc: DiscretizedParams, C_out: Tensor, D_skip: Tensor, x: Tensor, evaluator: Evaluator) -> Tensor:
    batch, length, channels, n = disc.B_bar.shape
    if x.shape != (batch, length, channels) or C_out.shape != (batch, length, n):
        raise DimensionError(f"scan: x {x.shape} and C {C_out.shape} do not match discretized {disc.B_bar.shape}")
    drive = disc.B_bar * x.reshape((batch, length, channels, 1))
    h = linear_recurrence(disc.A_bar, drive, evaluator)
    readout = (h * C_out.reshape((batch, length, 1, n))).sum(axis=-1)
    return readout + x * D_skip


def scan_sequential(disc: DiscretizedParams, C_out: Tensor, D_skip: Tensor, x: Tensor) -> Tensor:
    """``h_t = Ā_t h_{t-1} + B̄_t x_t``, ``y_t = <C_t, h_t> + D x_t`` evaluated left to right, ``h_0 = 0``."""
    return _scan(disc, C_out, D_skip, x, "sequential")


def scan_parallel(disc: DiscretizedParams, C_out: Tensor, D_skip: Tensor, x: Tensor) -> Tensor:
    """Same result as :func:`scan_sequential` through an associative prefix scan."""
    return _scan(disc, C_out, D_skip, x, "parallel")


def ssm_layer(x: Tensor, params: SsmParams, evaluator: Evaluator = "parallel") -> Tensor:
    if evaluator not in EVALUATORS:
        raise ConfigError(f"unknown evaluator {evaluator!r}; expected one of {list(EVALUATORS)}")
    delta, B_in, C_out = selective_params(x, params)
    disc = discretize(params.A_diag, B_in, delta)
    return _scan(disc, C_out, params.D_skip, x, evaluator)
