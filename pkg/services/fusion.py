"""Bottleneck mixture over the three encoder scales and the mutual-promotion join."""
from __future__ import annotations

from typing import Literal, Optional, Sequence

from framework import ops
from framework.errors import DimensionError
from framework.layers import Conv2d
from framework.module import Module, RngState
from framework.tensor import Tensor, concat
from models.net_config import NetConfig
from models.outputs import SCALES, SkipSet
from services.channel import ChannelSelectiveScan
from services.moe import ConvMoE, GateNet, MixtureOfExperts
from services.spatial import SpatialSelectiveScan

BranchKind = Literal["spatial", "channel"]


class MultiScaleMoE(MixtureOfExperts):
    """MS-MoE of one branch.

    The three encoder features are unified to the middle width with bias-free
    1x1 convs, brought to the middle resolution and concatenated; scan modules
    of the branch's own kind (fresh weights) are mixed over the result.  With
    ``use_ms_moe`` off the concatenation is returned as is.
    """

    def __init__(self, kind: BranchKind, net: NetConfig, rng: RngState):
        w1, w2, w3 = net.widths
        self.kind = kind
        self.unify = [Conv2d(width, w2, 1, rng, bias=False) for width in (w1, w2, w3)]
        self.width = 3 * w2
        self.experts = []
        self.gate = None
        if net.use_ms_moe:
            if kind == "spatial":
                self.experts = [
                    SpatialSelectiveScan(net.spatial(self.width), rng, net.ln_eps) for _ in range(net.n_experts)
                ]
            else:
                self.experts = [ChannelSelectiveScan(net.channel(self.width), rng) for _ in range(net.n_experts)]
            self._check()
            self.gate = GateNet(self.width, net.n_experts, rng, net.top_k)

    def gather(self, y1: Tensor, y2: Tensor, y3: Tensor) -> Tensor:
        fine, middle, coarse = (conv(y) for conv, y in zip(self.unify, (y1, y2, y3)))
        fine = ops.resample(fine, "down2", "area_mean")
        coarse = ops.resample(coarse, "up2", "nearest")
        if not fine.shape == middle.shape == coarse.shape:
            raise DimensionError(
                f"MS-MoE scales disagree after resampling: {fine.shape}, {middle.shape}, {coarse.shape}"
            )
        return concat([fine, middle, coarse], axis=1)

    def forward(self, y1: Tensor, y2: Tensor, y3: Tensor) -> Tensor:
        y_cat = self.gather(y1, y2, y3)
        if not self.experts:
            return y_cat
        return self.mix(y_cat, self.weights(y_cat))


def mp_fuse(y_s: Optional[Tensor], y_c: Optional[Tensor], skips: SkipSet, moes: Sequence[ConvMoE]) -> SkipSet:
    """``F = Y_s + Y_c``; ``Z_i = MoE_i(F) + Skip_i`` replaces skip i of every branch.

    A missing branch feature counts as zero.
    """
    if y_s is None and y_c is None:
        raise DimensionError("mp_fuse needs at least one branch feature")
    if y_s is not None and y_c is not None:
        if y_s.shape != y_c.shape:
            raise DimensionError(f"mp_fuse: Y_s {y_s.shape} and Y_c {y_c.shape} differ in shape")
        fused = y_s + y_c
    else:
        fused = y_s if y_s is not None else y_c
    injections = {scale: moe(fused) for scale, moe in zip(SCALES, moes)}
    updated = {}
    for branch in skips.branches:
        updated[branch] = {}
        for scale in SCALES:
            skip = skips.get(branch, scale)
            if injections[scale].shape != skip.shape:
                raise DimensionError(
                    f"mp_fuse: scale {scale.value} injection {injections[scale].shape} vs skip {skip.shape}"
                )
            updated[branch][scale] = injections[scale] + skip
    return skips.replace(updated)


class MutualPromotion(Module):
    """One conv MoE per decoder scale, shared by both branches."""

    def __init__(self, net: NetConfig, rng: RngState):
        fused_width = 3 * net.widths[1]
        self.moes = [
            ConvMoE(fused_width, width, index + 1, net.n_experts, rng, net.top_k)
            for index, width in enumerate(net.widths)
        ]

    def forward(self, y_s: Optional[Tensor], y_c: Optional[Tensor], skips: SkipSet) -> SkipSet:
        return mp_fuse(y_s, y_c, skips, self.moes)
