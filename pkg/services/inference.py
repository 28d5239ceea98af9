from __future__ import annotations

import logging

import numpy as np

from framework.errors import DimensionError
from framework.tensor import Tensor, no_grad, resolve_dtype
from models.outputs import Scale
from services.network import DIVISOR, OMambaNet

log = logging.getLogger(__name__)


def enhance(net: OMambaNet, image: np.ndarray) -> np.ndarray:
    """Full-scale fused output for one ``(3, H, W)`` image in [0, 1].

    Extents not divisible by 4 are reflect-padded at the bottom/right and the
    result is cropped back; values are clipped to [0, 1].
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"enhance expects a (3, H, W) image, got {image.shape}")
    height, width = image.shape[1:]
    pad_h, pad_w = -height % DIVISOR, -width % DIVISOR
    if pad_h or pad_w:
        log.debug("reflect-padding %dx%d input by (%d, %d)", height, width, pad_h, pad_w)
        image = np.pad(image, ((0, 0), (0, pad_h), (0, pad_w)), mode="reflect")
    batch = Tensor(image[None].astype(resolve_dtype(net.config.dtype)))
    with no_grad():
        out = net(batch).fused[Scale.FULL].data[0]
    return np.clip(out[:, :height, :width], 0.0, 1.0)
