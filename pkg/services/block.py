from __future__ import annotations

from framework.errors import DimensionError
from framework.layers import ChannelLayerNorm
from framework.module import Module, RngState
from framework.tensor import Tensor
from models.net_config import NetConfig
from services.moe import FeedForwardExpert, FeedForwardMoE


class MambaBlock(Module):
    """Pre-norm residual block shared by both branches.

    ``X_in = X_n + Y_prev``, ``X_mid = mixer(LN(X_in)) + X_in``, ``Y = ffn(LN(X_mid)) + X_mid``.
    LayerNorm runs over channels at each position.
    """

    def __init__(self, net: NetConfig, channels: int, mixer: Module, rng: RngState):
        self.channels = channels
        self.norm_mixer = ChannelLayerNorm(channels, net.ln_eps)
        self.mixer = mixer
        self.norm_ffn = ChannelLayerNorm(channels, net.ln_eps)
        if net.use_ff_moe:
            self.ffn = FeedForwardMoE(channels, net.n_experts, rng, net.ff_expansion, net.top_k)
        else:
            self.ffn = FeedForwardExpert(channels, rng, net.ff_expansion)

    def forward(self, x_n: Tensor | None, y_prev: Tensor) -> Tensor:
        if x_n is None:
            x_in = y_prev
        elif x_n.shape != y_prev.shape:
            raise DimensionError(f"block inputs differ in shape: X_n {x_n.shape} vs Y_prev {y_prev.shape}")
        else:
            x_in = x_n + y_prev
        x_mid = self.mixer(self.norm_mixer(x_in)) + x_in
        return self.ffn(self.norm_ffn(x_mid)) + x_mid
