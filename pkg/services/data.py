"""Paired dataset discovery and aligned patch sampling."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from framework.errors import DatasetError
from models.dataset import ImagePair, ImageSample, PairedDataset, PatchPair
from utils.images import IMAGE_SUFFIXES, read_image, resize

log = logging.getLogger(__name__)


def _images_in(folder: Path) -> dict[str, Path]:
    if not folder.is_dir():
        raise DatasetError(f"dataset folder not found: {folder}")
    return {p.name: p for p in folder.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES}


def load_pairs(root: str | Path, split: str) -> PairedDataset:
    """Filename-matched ``<root>/<split>/input`` and ``<root>/<split>/target`` images."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root not found: {root}")
    inputs = _images_in(root / split / "input")
    targets = _images_in(root / split / "target")
    warnings: list[str] = []
    for name in sorted(set(inputs) ^ set(targets)):
        side = "target" if name in inputs else "input"
        warnings.append(f"{name}: no matching {side} image")
    pairs: list[ImagePair] = []
    for name in sorted(set(inputs) & set(targets)):
        a, b = load_sample(inputs[name]), load_sample(targets[name])
        if a.extents != b.extents:
            warnings.append(f"{name}: input {a.extents} and target {b.extents} extents differ")
            continue
        pairs.append(ImagePair(name=name, input_path=inputs[name], target_path=targets[name]))
    for message in warnings:
        log.warning("%s/%s: %s", root, split, message)
    if not pairs:
        raise DatasetError(f"no usable image pairs under {root / split}")
    log.info("loaded %d pairs from %s (%d skipped)", len(pairs), root / split, len(warnings))
    return PairedDataset(root=root, split=split, pairs=pairs, warnings=warnings)


def load_sample(path: str | Path) -> ImageSample:
    return ImageSample(pixels=read_image(path), source=str(path))


def load_images(dataset: PairedDataset) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(read_image(p.input_path), read_image(p.target_path)) for p in dataset.pairs]


def sample_patch(
    pair: tuple[np.ndarray, np.ndarray],
    size: int,
    rng: np.random.Generator,
    hflip: bool = True,
) -> PatchPair:
    """One crop window (and optional mirror) drawn once and applied to both images.

    Images smaller than ``size`` are first resized up to fit.
    """
    source, target = pair
    height, width = source.shape[1:]
    if height < size or width < size:
        new_h, new_w = max(height, size), max(width, size)
        log.warning("image %dx%d is smaller than patch %d; resizing to %dx%d", height, width, size, new_h, new_w)
        source, target = resize(source, new_h, new_w), resize(target, new_h, new_w)
        height, width = new_h, new_w
    top = int(rng.integers(0, height - size + 1))
    left = int(rng.integers(0, width - size + 1))
    flipped = bool(hflip and rng.random() < 0.5)
    window = (slice(None), slice(top, top + size), slice(left, left + size))
    crop_in, crop_gt = source[window], target[window]
    if flipped:
        crop_in, crop_gt = crop_in[:, :, ::-1], crop_gt[:, :, ::-1]
    return PatchPair(
        input=np.ascontiguousarray(crop_in),
        target=np.ascontiguousarray(crop_gt),
        top=top,
        left=left,
        flipped=flipped,
    )
