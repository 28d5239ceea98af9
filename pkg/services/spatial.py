"""Four-direction 2D selective scan and the spatial Mamba block."""
from __future__ import annotations

from enum import Enum

from framework import ops
from framework.errors import DimensionError
from framework.layers import Conv2d, LayerNorm, Linear
from framework.module import Module, RngState
from framework.tensor import Tensor
from models.net_config import NetConfig, SSsmConfig
from services.block import MambaBlock
from services.ssm import SsmParams, ssm_layer


class ScanOrder(str, Enum):
    ROW_FORWARD = "row_forward"
    ROW_BACKWARD = "row_backward"
    COL_FORWARD = "col_forward"
    COL_BACKWARD = "col_backward"

    @property
    def column_major(self) -> bool:
        return self in (ScanOrder.COL_FORWARD, ScanOrder.COL_BACKWARD)

    @property
    def reversed(self) -> bool:
        return self in (ScanOrder.ROW_BACKWARD, ScanOrder.COL_BACKWARD)


# merge order of the directional outputs
SCAN_ORDERS: tuple[ScanOrder, ...] = (
    ScanOrder.ROW_FORWARD,
    ScanOrder.ROW_BACKWARD,
    ScanOrder.COL_FORWARD,
    ScanOrder.COL_BACKWARD,
)


def flatten_2d(x: Tensor, order: ScanOrder) -> Tensor:
    """``(B, C, H, W)`` to a ``(B, H*W, C)`` sequence in the given traversal order."""
    if x.ndim != 4:
        raise DimensionError(f"flatten_2d expects (B, C, H, W), got {x.shape}")
    batch, channels, height, width = x.shape
    axes = (0, 3, 2, 1) if order.column_major else (0, 2, 3, 1)
    seq = x.transpose(axes).reshape((batch, height * width, channels))
    return seq.flip(1) if order.reversed else seq


def unflatten_2d(seq: Tensor, order: ScanOrder, height: int, width: int) -> Tensor:
    """Inverse of :func:`flatten_2d`."""
    batch, length, channels = seq.shape
    if length != height * width:
        raise DimensionError(f"unflatten_2d: sequence length {length} does not fill a {height}x{width} grid")
    if order.reversed:
        seq = seq.flip(1)
    if order.column_major:
        return seq.reshape((batch, width, height, channels)).transpose((0, 3, 2, 1))
    return seq.reshape((batch, height, width, channels)).transpose((0, 3, 1, 2))


class SpatialSelectiveScan(Module):
    """S-SSM.

    Scanned branch: expand to λC, depthwise 3x3 conv, SiLU, one SSM per scan
    order (outputs summed), LayerNorm.  Gate branch: expand to λC, SiLU.
    The product of both is projected back to C.
    """

    def __init__(self, cfg: SSsmConfig, rng: RngState, ln_eps: float = ops.LAYER_NORM_EPS):
        inner = cfg.inner
        self.cfg = cfg
        self.in_proj_a = Linear(cfg.channels, inner, rng)
        self.in_proj_b = Linear(cfg.channels, inner, rng)
        self.conv = Conv2d(inner, inner, cfg.conv_kernel, rng, groups=inner)
        self.ssms = {order.value: SsmParams(inner, cfg.d_state, rng, cfg.dt_rank) for order in SCAN_ORDERS}
        self.norm = LayerNorm(inner, ln_eps)
        self.out_proj = Linear(inner, cfg.channels, rng)

    def scan_direction(self, features: Tensor, order: ScanOrder) -> Tensor:
        """One directional SSM over a ``(B, λC, H, W)`` map, returned in the same layout."""
        height, width = features.shape[2], features.shape[3]
        seq = ssm_layer(flatten_2d(features, order), self.ssms[order.value], self.cfg.evaluator)
        return unflatten_2d(seq, order, height, width)

    def scanned_branch(self, x: Tensor) -> Tensor:
        expanded = self.in_proj_a(x.transpose((0, 2, 3, 1))).transpose((0, 3, 1, 2))
        features = ops.silu(self.conv(expanded))
        merged = None
        for order in SCAN_ORDERS:
            out = self.scan_direction(features, order)
            merged = out if merged is None else merged + out
        return self.norm(merged.transpose((0, 2, 3, 1)))

    def gate_branch(self, x: Tensor) -> Tensor:
        return ops.silu(self.in_proj_b(x.transpose((0, 2, 3, 1))))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.channels:
            raise DimensionError(f"S-SSM expects (B, {self.cfg.channels}, H, W), got {x.shape}")
        gated = self.scanned_branch(x) * self.gate_branch(x)
        return self.out_proj(gated).transpose((0, 3, 1, 2))


class SpatialMambaBlock(MambaBlock):
    def __init__(self, net: NetConfig, channels: int, rng: RngState):
        super().__init__(net, channels, SpatialSelectiveScan(net.spatial(channels), rng, net.ln_eps), rng)

