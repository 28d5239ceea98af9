"""The O-shaped dual-branch network.

Each branch is a three-scale encoder/decoder of Mamba blocks with additive
skips.  The branches meet twice: the MS-MoE outputs of both encoders are summed
and redistributed into every decoder skip (mutual promotion), and the per-scale
branch images are summed into the fused output.
"""
from __future__ import annotations

import logging
from typing import Optional

from framework import ops
from framework.errors import ConfigError, DimensionError
from framework.layers import Conv2d
from framework.module import Module, RngState
from framework.tensor import Tensor, default_dtype, zeros
from models.net_config import NetConfig
from models.outputs import SCALES, MultiScaleOutput, Scale, SkipSet
from services.block import MambaBlock
from services.channel import ChannelMambaBlock
from services.fusion import BranchKind, MultiScaleMoE, MutualPromotion
from services.spatial import SpatialMambaBlock

log = logging.getLogger(__name__)

BLOCK_TYPES: dict[str, type[MambaBlock]] = {"spatial": SpatialMambaBlock, "channel": ChannelMambaBlock}
IMAGE_CHANNELS = 3
DIVISOR = 4


def _run_stage(blocks: list[MambaBlock], y: Tensor, x_n: Optional[Tensor] = None) -> Tensor:
    for index, block in enumerate(blocks):
        y = block(x_n if index == 0 else None, y)
    return y


class Branch(Module):
    """Encoder, decoder and output heads of one branch."""

    def __init__(self, kind: BranchKind, net: NetConfig, rng: RngState):
        block_type = BLOCK_TYPES[kind]
        w1, w2, w3 = net.widths
        self.kind = kind
        self.encoder = [[block_type(net, width, rng) for _ in range(net.blocks_per_scale)] for width in net.widths]
        self.downs = [Conv2d(w1, w2, 1, rng), Conv2d(w2, w3, 1, rng)]
        self.decoder = [[block_type(net, width, rng) for _ in range(net.blocks_per_scale)] for width in net.widths]
        self.ups = [Conv2d(w2, w1, 1, rng), Conv2d(w3, w2, 1, rng)]
        self.heads = [Conv2d(width, IMAGE_CHANNELS, 1, rng, zero_init=True) for width in net.widths]
        self.ms_moe = MultiScaleMoE(kind, net, rng) if net.use_mutual_promotion else None

    def encode(self, inputs: dict[Scale, Tensor]) -> dict[Scale, Tensor]:
        features: dict[Scale, Tensor] = {}
        y = _run_stage(self.encoder[0], inputs[Scale.FULL])
        features[Scale.FULL] = y
        for index, scale in enumerate(SCALES[1:], start=1):
            y = self.downs[index - 1](ops.resample(y, "down2", "area_mean"))
            y = _run_stage(self.encoder[index], y, inputs.get(scale))
            features[scale] = y
        return features

    def decode(self, skips: dict[Scale, Tensor]) -> dict[Scale, Tensor]:
        features: dict[Scale, Tensor] = {}
        y = _run_stage(self.decoder[2], skips[Scale.QUARTER])
        features[Scale.QUARTER] = y
        for index in (1, 0):
            scale = SCALES[index]
            u = self.ups[index](ops.resample(y, "up2", "nearest")) + skips[scale]
            y = _run_stage(self.decoder[index], u)
            features[scale] = y
        return features

    def images(self, decoded: dict[Scale, Tensor], pyramid: dict[Scale, Tensor], share: float) -> dict[Scale, Tensor]:
        return {scale: pyramid[scale] * share + self.heads[scale.index](decoded[scale]) for scale in SCALES}


class OMambaNet(Module):
    def __init__(self, config: NetConfig, rng: RngState):
        self.config = config
        embed_widths = config.widths if config.use_multiscale_input else config.widths[:1]
        self.embeds = [Conv2d(IMAGE_CHANNELS, width, 3, rng) for width in embed_widths]
        self.branches = {kind: Branch(kind, config, rng) for kind in config.branches}
        self.mp = MutualPromotion(config, rng) if config.use_mutual_promotion else None
        self.share = 1.0 / len(self.branches)

    def check_extents(self, image: Tensor) -> None:
        if image.ndim != 4 or image.shape[1] != IMAGE_CHANNELS:
            raise DimensionError(f"network input must be (B, 3, H, W), got {image.shape}")
        height, width = image.shape[2], image.shape[3]
        if height % DIVISOR or width % DIVISOR:
            raise ConfigError(f"input extents {height}x{width} must be divisible by {DIVISOR}")

    def pyramid(self, image: Tensor) -> dict[Scale, Tensor]:
        self.check_extents(image)
        return dict(zip(SCALES, ops.pyramid(image, levels=len(SCALES))))

    def multi_scale_inputs(self, image: Tensor) -> dict[Scale, Tensor]:
        """Embedded inputs ``X_n`` per scale (only the full scale when multi-scale input is off)."""
        levels = self.pyramid(image)
        return {scale: embed(levels[scale]) for scale, embed in zip(SCALES, self.embeds)}

    def forward(self, image: Tensor) -> MultiScaleOutput:
        levels = self.pyramid(image)
        inputs = {scale: embed(levels[scale]) for scale, embed in zip(SCALES, self.embeds)}
        encoded = {kind: branch.encode(inputs) for kind, branch in self.branches.items()}
        skips = SkipSet(features=encoded)
        if self.mp is not None:
            bottleneck = {kind: branch.ms_moe(*(encoded[kind][s] for s in SCALES)) for kind, branch in self.branches.items()}
            skips = self.mp(bottleneck.get("spatial"), bottleneck.get("channel"), skips)
        branch_images = {
            kind: branch.images(branch.decode(skips.features[kind]), levels, self.share)
            for kind, branch in self.branches.items()
        }
        absent = {scale: zeros(levels[scale].shape, dtype=levels[scale].dtype) for scale in SCALES}
        return MultiScaleOutput.combine(
            S=branch_images.get("spatial", absent),
            C=branch_images.get("channel", absent),
        )


def build(config: NetConfig, rng: RngState | int) -> OMambaNet:
    """Deterministically initialized network whose parameters carry unique hierarchical names."""
    if isinstance(rng, int):
        rng = RngState(rng)
    with default_dtype(config.dtype):
        net = OMambaNet(config, rng)
    registry = net.registry()
    log.info(
        "built network: branches=%s widths=%s parameters=%d tensors=%d",
        ",".join(config.branches),
        config.widths,
        net.parameter_count(),
        len(registry),
    )
    return net


def multi_scale_inputs(image: Tensor, net: OMambaNet) -> dict[Scale, Tensor]:
    return net.multi_scale_inputs(image)
