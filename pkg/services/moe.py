"""Gated mixtures of experts.

Every site mixes per sample: ``y(b) = sum_i w_i(b) * Expert_i(x)(b)`` with
``w = softmax(Linear(GAP(x)))``.  Sums are accumulated in expert-index order.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from framework import ops
from framework.errors import ConfigError, DimensionError
from framework.layers import Conv2d, Linear
from framework.module import Module, RngState
from framework.tensor import Tensor
from models.outputs import Scale


class GateNet(Module):
    def __init__(self, channels: int, n_experts: int, rng: RngState, top_k: Optional[int] = None):
        if top_k is not None and not 1 <= top_k <= n_experts:
            raise ConfigError(f"top_k must lie in [1, {n_experts}], got {top_k}")
        self.proj = Linear(channels, n_experts, rng)
        self.n_experts = n_experts
        self.top_k = top_k

    def forward(self, x: Tensor) -> Tensor:
        pooled = ops.global_avg_pool(x)
        logits = self.proj(pooled.reshape((x.shape[0], x.shape[1])))
        weights = ops.softmax(logits)
        if self.top_k is None or self.top_k == self.n_experts:
            return weights
        # zero all but the k largest per sample, then renormalize
        order = np.argsort(-weights.data, axis=-1, kind="stable")[:, : self.top_k]
        mask = np.zeros_like(weights.data)
        np.put_along_axis(mask, order, 1.0, axis=-1)
        kept = weights * Tensor(mask)
        return kept / kept.sum(axis=-1, keepdims=True)


def mixture(outputs: Sequence[Tensor], weights: Tensor) -> Tensor:
    """Per-sample weighted sum of expert outputs; ``weights`` is ``(B, n_experts)``."""
    if weights.ndim != 2 or weights.shape[1] != len(outputs):
        raise DimensionError(f"mixture: {len(outputs)} expert outputs but gate weights have shape {weights.shape}")
    total = None
    for index, out in enumerate(outputs):
        if out.shape[0] != weights.shape[0]:
            raise DimensionError(f"mixture: expert {index} output {out.shape} vs gate batch {weights.shape[0]}")
        w = weights[:, index].reshape((weights.shape[0],) + (1,) * (out.ndim - 1))
        term = w * out
        total = term if total is None else total + term
    return total


class MixtureOfExperts(Module):
    """``experts`` and a ``gate`` over the input; subclasses build the experts."""

    experts: list[Module]
    gate: GateNet

    def _check(self) -> None:
        if not self.experts:
            raise ConfigError(f"{type(self).__name__} needs at least one expert")

    def weights(self, x: Tensor) -> Tensor:
        return self.gate(x)

    def mix(self, x: Tensor, weights: Tensor) -> Tensor:
        return mixture([expert(x) for expert in self.experts], weights)

    def forward(self, x: Tensor) -> Tensor:
        return self.mix(x, self.weights(x))


class FeedForwardExpert(Module):
    """1x1 conv expand, SiLU, 1x1 conv contract."""

    def __init__(self, channels: int, rng: RngState, expansion: int = 2):
        self.expand = Conv2d(channels, expansion * channels, 1, rng)
        self.contract = Conv2d(expansion * channels, channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.contract(ops.silu(self.expand(x)))


class FeedForwardMoE(MixtureOfExperts):
    def __init__(self, channels: int, n_experts: int, rng: RngState, expansion: int = 2, top_k: Optional[int] = None):
        self.experts = [FeedForwardExpert(channels, rng, expansion) for _ in range(n_experts)]
        self._check()
        self.gate = GateNet(channels, n_experts, rng, top_k)


_EXPERT_RESAMPLE = {Scale.FULL: "up2", Scale.HALF: None, Scale.QUARTER: "down2"}


class ConvExpert(Module):
    """Maps the middle-scale fused feature to one decoder scale: 1x1 conv, resample, SiLU, 3x3 conv."""

    def __init__(self, c_in: int, c_out: int, scale: Scale, rng: RngState):
        self.reduce = Conv2d(c_in, c_out, 1, rng)
        self.refine = Conv2d(c_out, c_out, 3, rng)
        self.factor = _EXPERT_RESAMPLE[scale]

    def forward(self, x: Tensor) -> Tensor:
        y = self.reduce(x)
        if self.factor == "up2":
            y = ops.resample(y, "up2", "nearest")
        elif self.factor == "down2":
            y = ops.resample(y, "down2", "area_mean")
        return self.refine(ops.silu(y))


class ConvMoE(MixtureOfExperts):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        scale: Scale | int,
        n_experts: int,
        rng: RngState,
        top_k: Optional[int] = None,
    ):
        if isinstance(scale, int):
            if scale not in (1, 2, 3):
                raise ConfigError(f"conv MoE scale index must be 1, 2 or 3, got {scale}")
            scale = Scale.from_index(scale - 1)
        self.scale = scale
        self.experts = [ConvExpert(c_in, c_out, scale, rng) for _ in range(n_experts)]
        self._check()
        self.gate = GateNet(c_in, n_experts, rng, top_k)
