from __future__ import annotations

from pathlib import Path
from typing import Any, Literal, Mapping, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator

from framework.errors import ConfigError
from models.net_config import NetConfig


class TrainConfig(BaseModel):
    """Optimizer and schedule of a training run."""

    learning_rate: float = Field(2e-4, gt=0, description="Initial Adam learning rate.", json_schema_extra={"example": 2e-4})
    beta1: float = Field(0.9, ge=0, lt=1, description="Adam first-moment decay.")
    beta2: float = Field(0.999, ge=0, lt=1, description="Adam second-moment decay.")
    adam_eps: float = Field(1e-8, gt=0, description="Adam denominator epsilon.")
    batch_size: int = Field(4, ge=1, description="Patches per iteration.", json_schema_extra={"example": 2})
    patch: int = Field(128, ge=4, description="Square training patch extent; divisible by 4.", json_schema_extra={"example": 64})
    total_iters: int = Field(1000, ge=1, description="Optimizer steps in the run.", json_schema_extra={"example": 300})
    lr_halving_milestones: Optional[list[int]] = Field(
        None,
        description="Iterations at which the learning rate halves; None means 60% and 80% of total_iters.",
        json_schema_extra={"example": [600, 800]},
    )
    seed: int = Field(0, ge=0, lt=2**64, description="Seed for initialization and data order.")
    hflip: bool = Field(True, description="Random horizontal flips applied to both images of a pair.")
    loss_schedule: Literal["cyclic", "joint"] = Field(
        "cyclic",
        description="cyclic: one scale loss per iteration (k mod 3); joint: all three every iteration.",
    )
    val_every: int = Field(0, ge=0, description="Validate every n iterations; 0 validates once at the end.")
    checkpoint_every: int = Field(0, ge=0, description="Write a checkpoint every n iterations; 0 writes only the final one.")
    log_every: int = Field(10, ge=1, description="Log progress every n iterations.")

    model_config = {
        "json_schema_extra": {
            "examples": [
                {"learning_rate": 2e-4, "batch_size": 4, "patch": 128, "total_iters": 300, "seed": 7},
            ]
        }
    }

    @field_validator("patch")
    @classmethod
    def _patch_divisible(cls, value: int) -> int:
        if value % 4:
            raise ValueError(f"patch must be divisible by 4, got {value}")
        return value

    @field_validator("lr_halving_milestones")
    @classmethod
    def _milestones_positive(cls, value: Optional[list[int]]) -> Optional[list[int]]:
        if value is not None and any(m < 0 for m in value):
            raise ValueError(f"milestones must be non-negative iterations, got {value}")
        return value

    def milestones(self) -> list[int]:
        if self.lr_halving_milestones is not None:
            return sorted(self.lr_halving_milestones)
        return [int(0.6 * self.total_iters), int(0.8 * self.total_iters)]


class DataConfig(BaseModel):
    """Location of the paired dataset."""

    root: Optional[Path] = Field(
        None,
        description="Dataset root holding <split>/input and <split>/target.",
        json_schema_extra={"example": "data/uieb"},
    )
    train_split: str = Field("train", description="Split used for training.")
    test_split: str = Field("test", description="Split used for validation and evaluation.")


SECTIONS: dict[str, type[BaseModel]] = {"net": NetConfig, "train": TrainConfig, "data": DataConfig}


def valid_keys() -> list[str]:
    return [f"{section}.{name}" for section, model in SECTIONS.items() for name in model.model_fields]


def _describe(exc: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(part) for part in err['loc']) or 'config'}: {err['msg']}" for err in exc.errors()
    )


class RunConfig(BaseModel):
    net: NetConfig = Field(default_factory=NetConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)

    @classmethod
    def from_flat(cls, flat: Mapping[str, Any]) -> "RunConfig":
        """Build from dotted keys (``net.base_channels``) or unambiguous bare keys (``total_iters``)."""
        sections: dict[str, dict[str, Any]] = {name: {} for name in SECTIONS}
        for key, value in flat.items():
            section, name = resolve_key(key)
            sections[section][name] = value
        try:
            return cls(**sections)
        except ValidationError as exc:
            raise ConfigError(f"invalid configuration: {_describe(exc)}") from None

    def to_flat(self) -> dict[str, Any]:
        dumped = self.model_dump(mode="json")
        return {f"{section}.{name}": value for section, fields in dumped.items() for name, value in fields.items()}


def resolve_key(key: str) -> tuple[str, str]:
    if "." in key:
        section, _, name = key.partition(".")
        if section in SECTIONS and name in SECTIONS[section].model_fields:
            return section, name
    else:
        owners = [section for section, model in SECTIONS.items() if key in model.model_fields]
        if len(owners) == 1:
            return owners[0], key
        if len(owners) > 1:
            raise ConfigError(f"ambiguous key {key!r}; use one of {[f'{o}.{key}' for o in owners]}")
    raise ConfigError(f"unknown configuration key {key!r}; valid keys: {', '.join(valid_keys())}")
