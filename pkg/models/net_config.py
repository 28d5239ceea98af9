from __future__ import annotations

import math
from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator

EvaluatorName = Literal["sequential", "parallel"]
DtypeName = Literal["f32", "f64"]


class SSsmConfig(BaseModel):
    """Hyperparameters of one spatial selective-scan module."""

    channels: int = Field(..., ge=1, description="Feature channels C entering the module.", json_schema_extra={"example": 8})
    expansion: float = Field(2.0, ge=1.0, description="Channel expansion factor λ.", json_schema_extra={"example": 2.0})
    d_state: int = Field(4, ge=1, description="State size N of every directional SSM.", json_schema_extra={"example": 4})
    conv_kernel: Literal[3] = Field(3, description="Depthwise conv kernel of the scanned branch.")
    dt_rank: int = Field(1, ge=1, description="Rank of the Δ projection.")
    evaluator: EvaluatorName = Field("parallel", description="Scan kernel used by the SSM layers.")

    @property
    def inner(self) -> int:
        return math.floor(self.expansion * self.channels)

    @model_validator(mode="after")
    def _expanded_width(self) -> "SSsmConfig":
        if self.inner < self.channels:
            raise ValueError(f"floor(expansion * channels) = {self.inner} is smaller than channels = {self.channels}")
        return self


class CSsmConfig(BaseModel):
    """Hyperparameters of one channel selective-scan module."""

    channels: int = Field(..., ge=1, description="Channels C; the scanned sequence has length C.", json_schema_extra={"example": 8})
    d_state: int = Field(4, ge=1, description="State size N of the channel SSMs.", json_schema_extra={"example": 4})
    dt_rank: int = Field(1, ge=1, description="Rank of the Δ projection.")
    evaluator: EvaluatorName = Field("parallel", description="Scan kernel used by the SSM layers.")


class NetConfig(BaseModel):
    """Architecture of the dual-branch network."""

    scales: Literal[3] = Field(3, description="Number of scales; the architecture is defined for exactly three.")
    base_channels: int = Field(
        16,
        ge=1,
        description="Block width at full resolution; widths double per down-scale.",
        json_schema_extra={"example": 8},
    )
    blocks_per_scale: int = Field(1, ge=1, description="Mamba blocks per encoder/decoder stage.", json_schema_extra={"example": 1})
    expansion: float = Field(2.0, ge=1.0, description="S-SSM channel expansion λ.", json_schema_extra={"example": 2.0})
    d_state: int = Field(8, ge=1, description="SSM state size N.", json_schema_extra={"example": 4})
    n_experts: int = Field(4, ge=1, description="Experts at every MoE site.", json_schema_extra={"example": 2})
    dt_rank: int = Field(1, ge=1, description="Rank of the Δ projection.")
    ff_expansion: int = Field(2, ge=1, description="Width multiplier inside feed-forward experts.")
    top_k: Optional[int] = Field(
        None,
        ge=1,
        description="Keep only the k largest gate weights (renormalized); None is dense soft gating.",
        json_schema_extra={"example": None},
    )
    ln_eps: float = Field(1e-5, gt=0, description="LayerNorm epsilon.")
    evaluator: EvaluatorName = Field("parallel", description="Scan kernel for every SSM layer.")
    dtype: DtypeName = Field("f32", description="Parameter and activation dtype.")
    use_spatial_branch: bool = Field(True, description="Build the spatial Mamba branch.")
    use_channel_branch: bool = Field(True, description="Build the channel Mamba branch.")
    use_mutual_promotion: bool = Field(True, description="Fuse branch bottlenecks into the decoder skips.")
    use_multiscale_input: bool = Field(True, description="Inject embedded downsampled images at scales 1/2 and 1/4.")
    use_ff_moe: bool = Field(True, description="Gated feed-forward experts inside blocks (a single expert otherwise).")
    use_ms_moe: bool = Field(True, description="Mixture of scan experts over concatenated encoder scales.")

    model_config = {
        "json_schema_extra": {
            "examples": [
                {
                    "base_channels": 8,
                    "blocks_per_scale": 1,
                    "expansion": 2.0,
                    "d_state": 4,
                    "n_experts": 2,
                    "dtype": "f64",
                    "use_channel_branch": False,
                }
            ]
        }
    }

    @model_validator(mode="after")
    def _consistent(self) -> "NetConfig":
        if not (self.use_spatial_branch or self.use_channel_branch):
            raise ValueError("at least one of use_spatial_branch / use_channel_branch must be enabled")
        if self.top_k is not None and self.top_k > self.n_experts:
            raise ValueError(f"top_k = {self.top_k} exceeds n_experts = {self.n_experts}")
        return self

    @property
    def widths(self) -> tuple[int, int, int]:
        return self.base_channels, 2 * self.base_channels, 4 * self.base_channels

    @property
    def branches(self) -> tuple[str, ...]:
        return tuple(
            name
            for name, enabled in (("spatial", self.use_spatial_branch), ("channel", self.use_channel_branch))
            if enabled
        )

    def spatial(self, channels: int) -> SSsmConfig:
        return SSsmConfig(
            channels=channels,
            expansion=self.expansion,
            d_state=self.d_state,
            dt_rank=self.dt_rank,
            evaluator=self.evaluator,
        )

    def channel(self, channels: int) -> CSsmConfig:
        return CSsmConfig(channels=channels, d_state=self.d_state, dt_rank=self.dt_rank, evaluator=self.evaluator)
