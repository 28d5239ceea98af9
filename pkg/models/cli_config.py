from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field

from models.net_config import DtypeName, EvaluatorName
from models.train_config import RunConfig
from utils.config_file import apply_overrides, read_config

Subcommand = Literal["train", "infer", "eval", "grad-check", "bench-scan"]


class CliConfig(BaseModel):
    """Options shared by every subcommand."""

    subcommand: Subcommand = Field(..., description="Subcommand being run.", json_schema_extra={"example": "train"})
    config: Optional[Path] = Field(None, description="TOML run file.", json_schema_extra={"example": "configs/tiny.cfg"})
    overrides: list[str] = Field(
        default_factory=list,
        description="key=value pairs applied after the file, last wins.",
        json_schema_extra={"example": ["total_iters=30", "net.n_experts=2"]},
    )
    seed: Optional[int] = Field(None, ge=0, description="Overrides train.seed.", json_schema_extra={"example": 0})
    out: Path = Field(Path("runs"), description="Output directory.", json_schema_extra={"example": "runs/tiny"})
    dtype: Optional[DtypeName] = Field(None, description="Overrides net.dtype.")
    evaluator: Optional[EvaluatorName] = Field(None, description="Overrides net.evaluator.")

    model_config = {
        "json_schema_extra": {
            "examples": [
                {
                    "subcommand": "train",
                    "config": "configs/tiny.cfg",
                    "overrides": ["total_iters=30"],
                    "seed": 0,
                    "out": "runs/tiny",
                    "dtype": "f64",
                }
            ]
        }
    }

    def resolve(self) -> RunConfig:
        flat = read_config(self.config) if self.config is not None else {}
        flat = apply_overrides(flat, self.overrides)
        if self.seed is not None:
            flat["train.seed"] = self.seed
        if self.dtype is not None:
            flat["net.dtype"] = self.dtype
        if self.evaluator is not None:
            flat["net.evaluator"] = self.evaluator
        return RunConfig.from_flat(flat)
