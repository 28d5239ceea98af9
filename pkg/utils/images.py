"""8-bit image files to and from channels-first [0, 1] arrays."""
from __future__ import annotations

import logging
from pathlib import Path

import cv2
import numpy as np

from framework.errors import DatasetError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm")


def read_image(path: str | Path) -> np.ndarray:
    """``(3, H, W)`` float32 RGB in [0, 1]; 255 decodes to exactly 1.0."""
    path = Path(path)
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise DatasetError(f"cannot decode image {path}")
    rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    return (rgb.astype(np.float32) / 255.0).transpose(2, 0, 1)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """``(3, H, W)`` [0, 1] array to ``(H, W, 3)`` uint8 RGB."""
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def write_image(path: str | Path, image: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), cv2.cvtColor(to_uint8(image), cv2.COLOR_RGB2BGR)):
        raise DatasetError(f"cannot write image {path}")
    return path


def resize(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a ``(3, H, W)`` array."""
    hwc = np.ascontiguousarray(image.transpose(1, 2, 0))
    resized = cv2.resize(hwc, (width, height), interpolation=cv2.INTER_LINEAR)
    return np.clip(resized, 0.0, 1.0).transpose(2, 0, 1)
