from __future__ import annotations

from enum import Enum
from typing import Dict

from pydantic import BaseModel, ConfigDict, Field, model_validator

from framework.tensor import Tensor


class Scale(str, Enum):
    """The three resolutions of the network, finest first."""

    FULL = "1"
    HALF = "1/2"
    QUARTER = "1/4"

    @property
    def index(self) -> int:
        return SCALES.index(self)

    @property
    def factor(self) -> int:
        return 2**self.index

    @classmethod
    def from_index(cls, index: int) -> "Scale":
        return SCALES[index]


SCALES: tuple[Scale, ...] = (Scale.FULL, Scale.HALF, Scale.QUARTER)


def _require_all_scales(name: str, maps: Dict[Scale, Tensor]) -> None:
    missing = [scale.value for scale in SCALES if scale not in maps]
    if missing:
        raise ValueError(f"{name} is missing scale(s) {missing}")


class MultiScaleOutput(BaseModel):
    """Per-scale branch images and their sums."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    S: Dict[Scale, Tensor] = Field(..., description="Spatial-branch images at every scale.")
    C: Dict[Scale, Tensor] = Field(..., description="Channel-branch images at every scale.")
    fused: Dict[Scale, Tensor] = Field(..., description="S + C at every scale.")

    @classmethod
    def combine(cls, S: Dict[Scale, Tensor], C: Dict[Scale, Tensor]) -> "MultiScaleOutput":
        return cls(S=S, C=C, fused={scale: S[scale] + C[scale] for scale in SCALES if scale in S and scale in C})

    @model_validator(mode="after")
    def _complete(self) -> "MultiScaleOutput":
        for name, maps in (("S", self.S), ("C", self.C), ("fused", self.fused)):
            _require_all_scales(name, maps)
        return self


class SkipSet(BaseModel):
    """Encoder features per branch and scale, consumed additively by the decoders."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    features: Dict[str, Dict[Scale, Tensor]] = Field(
        ...,
        description="branch name ('spatial' / 'channel') -> scale -> feature map",
        json_schema_extra={"example": {"spatial": {"1": "(B, 8, H, W)", "1/2": "(B, 16, H/2, W/2)"}}},
    )

    @model_validator(mode="after")
    def _complete(self) -> "SkipSet":
        for branch, maps in self.features.items():
            _require_all_scales(f"skips[{branch}]", maps)
        return self

    def get(self, branch: str, scale: Scale) -> Tensor:
        return self.features[branch][scale]

    @property
    def branches(self) -> tuple[str, ...]:
        return tuple(self.features)

    def replace(self, updated: Dict[str, Dict[Scale, Tensor]]) -> "SkipSet":
        return SkipSet(features={branch: dict(updated.get(branch, maps)) for branch, maps in self.features.items()})
