"""Channel selective scan (pooled channel attention) and the channel Mamba block."""
from __future__ import annotations

from framework import ops
from framework.errors import DimensionError
from framework.layers import Conv2d
from framework.module import Module, RngState
from framework.tensor import Tensor
from models.net_config import CSsmConfig, NetConfig
from services.block import MambaBlock
from services.ssm import SsmParams, ssm_layer


class ChannelSelectiveScan(Module):
    """C-SSM: ``a = sigmoid(fwd(q) + bwd(q))`` with ``q = SiLU(Conv1x1(GAP(x)))`` scanned over channels.

    Each channel contributes one pooled scalar, so the scanned sequence is
    ``(B, C, 1)``; the output is ``x * a`` broadcast over H and W.
    """

    def __init__(self, cfg: CSsmConfig, rng: RngState):
        self.cfg = cfg
        self.squeeze = Conv2d(cfg.channels, cfg.channels, 1, rng)
        self.forward_ssm = SsmParams(1, cfg.d_state, rng, cfg.dt_rank)
        self.backward_ssm = SsmParams(1, cfg.d_state, rng, cfg.dt_rank)

    def attention_logits(self, x: Tensor) -> Tensor:
        batch, channels = x.shape[0], x.shape[1]
        q = ops.silu(self.squeeze(ops.global_avg_pool(x)))
        seq = q.reshape((batch, channels, 1))
        ahead = ssm_layer(seq, self.forward_ssm, self.cfg.evaluator)
        behind = ssm_layer(seq.flip(1), self.backward_ssm, self.cfg.evaluator).flip(1)
        return (ahead + behind).reshape((batch, channels, 1, 1))

    def attention(self, x: Tensor) -> Tensor:
        return ops.sigmoid(self.attention_logits(x))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.channels:
            raise DimensionError(f"C-SSM expects (B, {self.cfg.channels}, H, W), got {x.shape}")
        return x * self.attention(x)


class ChannelMambaBlock(MambaBlock):
    def __init__(self, net: NetConfig, channels: int, rng: RngState):
        super().__init__(net, channels, ChannelSelectiveScan(net.channel(channels), rng), rng)
