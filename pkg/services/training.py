"""Cyclic multi-scale training.

Every iteration runs the full forward pass (all six branch images) and then
optimizes exactly one scale: scale ``k mod 3`` with 0 = full, 1 = half,
2 = quarter resolution.  The loss is the mean absolute error between the fused
output and the area-mean downsampled reference at that scale.
"""
from __future__ import annotations

import csv
import logging
import time
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from framework import ops
from framework.errors import ConfigError, DimensionError, PreconditionError
from framework.module import RngState
from framework.tensor import Tensor, resolve_dtype
from models.outputs import SCALES, MultiScaleOutput, Scale
from models.report import TrainSummary
from models.train_config import RunConfig
from services import checkpoints
from services.data import sample_patch
from services.inference import enhance
from services.metrics import psnr, ssim
from services.network import OMambaNet
from services.optim import TrainState, adam_step

log = logging.getLogger(__name__)

METRICS_COLUMNS = ("iteration", "selected_scale", "loss", "lr", "wall_ms")
ALL_SCALES = "all"
DATA_SEED_OFFSET = 1


def scale_for_iteration(k: int) -> Scale:
    return Scale.from_index(k % len(SCALES))


def downsample_gt(gt: Tensor) -> dict[Scale, Tensor]:
    """Reference pyramid at factors 1, 2 and 4 by area-mean downsampling."""
    if gt.ndim != 4:
        raise DimensionError(f"downsample_gt expects (B, 3, H, W), got {gt.shape}")
    if gt.shape[2] % 4 or gt.shape[3] % 4:
        raise ConfigError(f"reference extents {gt.shape[2]}x{gt.shape[3]} must be divisible by 4")
    return dict(zip(SCALES, ops.pyramid(gt, levels=len(SCALES))))


def l1(prediction: Tensor, reference: Tensor) -> Tensor:
    if prediction.shape != reference.shape:
        raise DimensionError(f"loss operands differ in shape: {prediction.shape} vs {reference.shape}")
    return (prediction - reference).abs().mean()


def _check_outputs(out: MultiScaleOutput, gts: Mapping[Scale, Tensor]) -> None:
    missing = [scale.value for scale in SCALES if scale not in gts]
    if missing:
        raise PreconditionError(f"reference pyramid is missing scale(s) {missing}")
    for scale in SCALES:
        for name, tensor in (("S", out.S[scale]), ("C", out.C[scale]), ("reference", gts[scale])):
            if not np.all(np.isfinite(tensor.data)):
                raise PreconditionError(f"{name} at scale {scale.value} holds non-finite values")


def cms_loss(out: MultiScaleOutput, gts: Mapping[Scale, Tensor], k: int) -> tuple[Tensor, Scale]:
    """Loss of the single scale selected by ``k mod 3``; no other scale reaches the graph."""
    _check_outputs(out, gts)
    scale = scale_for_iteration(k)
    return l1(out.fused[scale], gts[scale]), scale


def joint_loss(out: MultiScaleOutput, gts: Mapping[Scale, Tensor]) -> Tensor:
    """All three scale losses summed, every iteration."""
    _check_outputs(out, gts)
    total = None
    for scale in SCALES:
        term = l1(out.fused[scale], gts[scale])
        total = term if total is None else total + term
    return total


def make_batch(
    images: list[tuple[np.ndarray, np.ndarray]],
    indices: list[int],
    run: RunConfig,
    rng: RngState,
) -> tuple[Tensor, Tensor]:
    dtype = resolve_dtype(run.net.dtype)
    patches = [sample_patch(images[i], run.train.patch, rng.generator, run.train.hflip) for i in indices]
    source = np.stack([p.input for p in patches]).astype(dtype)
    target = np.stack([p.target for p in patches]).astype(dtype)
    return Tensor(source), Tensor(target)


def validate(net: OMambaNet, images: list[tuple[np.ndarray, np.ndarray]]) -> tuple[float, float]:
    """Mean PSNR and SSIM of the enhanced full images against their references."""
    psnrs, ssims = [], []
    for source, target in images:
        enhanced = enhance(net, source)
        psnrs.append(psnr(enhanced, target))
        ssims.append(ssim(enhanced, target))
    return float(np.mean(psnrs)), float(np.mean(ssims))


class _MetricsLog:
    def __init__(self, path: Path, append: bool):
        path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not (append and path.exists())
        self.handle = path.open("w" if fresh else "a", newline="", encoding="utf-8")
        self.writer = csv.writer(self.handle)
        if fresh:
            self.writer.writerow(METRICS_COLUMNS)

    def write(self, iteration: int, scale: str, loss: float, lr: float, wall_ms: float) -> None:
        self.writer.writerow([iteration, scale, repr(loss), repr(lr), f"{wall_ms:.3f}"])
        self.handle.flush()

    def close(self) -> None:
        self.handle.close()


def train_loop(
    train_images: list[tuple[np.ndarray, np.ndarray]],
    net: OMambaNet,
    run: RunConfig,
    out_dir: str | Path,
    val_images: Optional[list[tuple[np.ndarray, np.ndarray]]] = None,
    resume: Optional[str | Path] = None,
) -> TrainSummary:
    """Forward, loss, backward and Adam step per iteration until ``total_iters``.

    Writes ``metrics.csv``, checkpoints under ``checkpoints/`` and ``summary.json``.
    """
    if not train_images:
        raise PreconditionError("training needs at least one image pair")
    out_dir = Path(out_dir)
    cfg = run.train
    params = net.registry()
    if resume is not None:
        state = checkpoints.restore_state(resume, net, len(train_images))
        log.info("resumed from %s at iteration %d", resume, state.iteration)
    else:
        data_rng = RngState((cfg.seed + DATA_SEED_OFFSET) % 2**64)
        state = TrainState.fresh(params, data_rng, len(train_images))
    val_images = val_images or train_images

    metrics = _MetricsLog(out_dir / "metrics.csv", append=resume is not None)
    final_loss = float("nan")
    last_checkpoint: Optional[Path] = None
    try:
        while state.iteration < cfg.total_iters:
            k = state.iteration
            started = time.perf_counter()
            source, target = make_batch(train_images, state.sampler.next_indices(cfg.batch_size), run, state.rng)
            net.zero_grad()
            out = net(source)
            gts = downsample_gt(target)
            if cfg.loss_schedule == "joint":
                loss, label = joint_loss(out, gts), ALL_SCALES
            else:
                loss, scale = cms_loss(out, gts, k)
                label = scale.value
            loss.backward()
            lr = adam_step(params, state, cfg)
            final_loss = loss.item()
            wall_ms = (time.perf_counter() - started) * 1e3
            metrics.write(k, label, final_loss, lr, wall_ms)
            if k % cfg.log_every == 0 or state.iteration == cfg.total_iters:
                log.info("iter %d scale %s loss %.6f lr %.3g (%.0f ms)", k, label, final_loss, lr, wall_ms)

            done = state.iteration == cfg.total_iters
            if done or (cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0):
                last_checkpoint = checkpoints.save_run(
                    checkpoints.checkpoint_path(out_dir, state.iteration), net, run, state
                )
            if done or (cfg.val_every and state.iteration % cfg.val_every == 0):
                _validate_into(net, val_images, state)
    finally:
        metrics.close()

    summary = TrainSummary(
        total_iterations=state.iteration,
        final_loss=final_loss,
        best_psnr=state.best["psnr"],
        best_ssim=state.best["ssim"],
        best_iteration=state.best["iteration"],
        checkpoint=str(last_checkpoint) if last_checkpoint is not None else None,
    )
    (out_dir / "summary.json").write_text(summary.model_dump_json(indent=2), encoding="utf-8")
    return summary


def _validate_into(net: OMambaNet, images: list[tuple[np.ndarray, np.ndarray]], state: TrainState) -> None:
    mean_psnr, mean_ssim = validate(net, images)
    log.info("validation at iter %d: PSNR %.3f dB SSIM %.4f", state.iteration, mean_psnr, mean_ssim)
    if state.best["psnr"] is None or mean_psnr > state.best["psnr"]:
        state.best = {"psnr": mean_psnr, "ssim": mean_ssim, "iteration": state.iteration}
