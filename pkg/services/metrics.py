"""Full-reference quality metrics on [0, 1] RGB images."""
from __future__ import annotations

import csv
from typing import Iterable, Sequence, TextIO, Union

import numpy as np
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from framework.errors import DimensionError, MetricError
from models.dataset import ImageSample
from models.report import EvalRow

PSNR_CAP_DB = 99.0
MSE_FLOOR = 1e-10
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

ImageLike = Union[ImageSample, np.ndarray]


def _pair(a: ImageLike, b: ImageLike) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(a.pixels if isinstance(a, ImageSample) else a, dtype=np.float64)
    y = np.asarray(b.pixels if isinstance(b, ImageSample) else b, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"metric operands differ in shape: {x.shape} vs {y.shape}")
    return x, y


def psnr(a: ImageLike, b: ImageLike) -> float:
    """``10 log10(1 / MSE)`` over all channels; 99 dB when the images (nearly) coincide."""
    x, y = _pair(a, b)
    if float(np.mean((x - y) ** 2)) < MSE_FLOOR:
        return PSNR_CAP_DB
    return float(peak_signal_noise_ratio(x, y, data_range=1.0))


def ssim(
    a: ImageLike,
    b: ImageLike,
    window: int = SSIM_WINDOW,
    k1: float = SSIM_K1,
    k2: float = SSIM_K2,
) -> float:
    """Gaussian-window SSIM (σ = 1.5), averaged over channels and positions, dynamic range 1."""
    x, y = _pair(a, b)
    if x.ndim != 3:
        raise DimensionError(f"ssim expects (C, H, W) images, got {x.shape}")
    if min(x.shape[1:]) < window:
        raise MetricError(f"image extents {x.shape[1]}x{x.shape[2]} are smaller than the {window}-pixel SSIM window")
    return float(
        structural_similarity(
            x,
            y,
            win_size=window,
            data_range=1.0,
            channel_axis=0,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            K1=k1,
            K2=k2,
        )
    )


EVAL_COLUMNS = ("filename", "psnr_db", "ssim")
MEAN_ROW = "mean"


def score_pairs(names: Sequence[str], outputs: Sequence[ImageLike], references: Sequence[ImageLike]) -> list[EvalRow]:
    """Per-image PSNR/SSIM rows followed by one ``mean`` row."""
    if not (len(names) == len(outputs) == len(references)):
        raise DimensionError("score_pairs needs one output and one reference per name")
    if not names:
        raise MetricError("nothing to score")
    rows = [
        EvalRow(filename=name, psnr_db=psnr(out, ref), ssim=ssim(out, ref))
        for name, out, ref in zip(names, outputs, references)
    ]
    rows.append(
        EvalRow(
            filename=MEAN_ROW,
            psnr_db=float(np.mean([row.psnr_db for row in rows])),
            ssim=float(np.mean([row.ssim for row in rows])),
        )
    )
    return rows


def write_eval_csv(rows: Iterable[EvalRow], handle: TextIO) -> None:
    writer = csv.writer(handle)
    writer.writerow(EVAL_COLUMNS)
    for row in rows:
        writer.writerow([row.filename, repr(row.psnr_db), repr(row.ssim)])
