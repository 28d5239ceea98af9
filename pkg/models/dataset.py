from __future__ import annotations

from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator


class ImageSample(BaseModel):
    """Decoded RGB image, channels first, values in [0, 1]."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    pixels: np.ndarray = Field(..., description="(3, H, W) array in [0, 1].")
    source: str = Field(..., description="File the pixels came from.", json_schema_extra={"example": "test/input/12_img_.png"})

    @field_validator("pixels")
    @classmethod
    def _rgb_unit_range(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim != 3 or value.shape[0] != 3:
            raise ValueError(f"expected a (3, H, W) image, got shape {value.shape}")
        if value.size and (value.min() < 0.0 or value.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        return value

    @property
    def extents(self) -> tuple[int, int]:
        return int(self.pixels.shape[1]), int(self.pixels.shape[2])


class ImagePair(BaseModel):
    """A degraded image and its reference, matched by file name."""

    model_config = ConfigDict(frozen=True)

    name: str = Field(..., description="Shared file name.", json_schema_extra={"example": "12_img_.png"})
    input_path: Path = Field(..., description="Degraded image.")
    target_path: Path = Field(..., description="Reference image.")


class PairedDataset(BaseModel):
    root: Path = Field(..., description="Dataset root.", json_schema_extra={"example": "data/uieb"})
    split: str = Field(..., description="Split directory under root.", json_schema_extra={"example": "train"})
    pairs: list[ImagePair] = Field(default_factory=list, description="Pairs in lexicographic name order.")
    warnings: list[str] = Field(default_factory=list, description="Skipped files and the reason for each.")

    def __len__(self) -> int:
        return len(self.pairs)


class PatchPair(BaseModel):
    """Aligned training crops; both come from the same window and share the flip."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    input: np.ndarray = Field(..., description="(3, size, size) degraded crop.")
    target: np.ndarray = Field(..., description="(3, size, size) reference crop.")
    top: int = Field(..., ge=0, description="Row of the window's upper-left corner.")
    left: int = Field(..., ge=0, description="Column of the window's upper-left corner.")
    flipped: bool = Field(False, description="Whether both crops were mirrored horizontally.")
