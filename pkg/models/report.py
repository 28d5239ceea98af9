from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class TrainSummary(BaseModel):
    total_iterations: int = Field(description="Iterations completed, including resumed ones.")
    final_loss: float = Field(description="Loss of the last iteration.")
    best_psnr: Optional[float] = Field(default=None, description="Best mean validation PSNR (dB).")
    best_ssim: Optional[float] = Field(default=None, description="Mean validation SSIM at the best-PSNR iteration.")
    best_iteration: Optional[int] = Field(default=None, description="Iteration of the best validation PSNR.")
    checkpoint: Optional[str] = Field(default=None, description="Final checkpoint written by the run.")

    model_config = {
        "json_schema_extra": {
            "example": {
                "total_iterations": 2000,
                "final_loss": 0.0123,
                "best_psnr": 31.2,
                "best_ssim": 0.962,
                "best_iteration": 2000,
                "checkpoint": "runs/tiny/checkpoints/iter_002000.omk",
            }
        }
    }


class GradCheckItem(BaseModel):
    name: str = Field(description="Battery entry, e.g. 'conv2d' or 'sm_block'.")
    max_rel_error: float = Field(description="Worst relative error against central differences.")
    tolerance: float = Field(description="Largest acceptable error for this entry.")
    error: Optional[str] = Field(default=None, description="Failure raised while checking, e.g. a non-finite op.")

    @property
    def passed(self) -> bool:
        return self.error is None and self.max_rel_error <= self.tolerance


class BenchRow(BaseModel):
    evaluator: str = Field(description="Scan kernel.", json_schema_extra={"example": "parallel"})
    L: int = Field(description="Sequence length.")
    N: int = Field(description="State size.")
    D: int = Field(description="Channels.")
    wall_time_ns: int = Field(description="Best wall time over the repeats.")
    max_abs_diff_vs_sequential: float = Field(description="Largest deviation from the sequential kernel.")


class EvalRow(BaseModel):
    filename: str = Field(description="Pair name, or 'mean' for the summary row.")
    psnr_db: float = Field(description="PSNR of the enhanced image against its reference.")
    ssim: float = Field(description="SSIM of the enhanced image against its reference.")
