from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np
import pytest

from framework.module import RngState
from framework.tensor import default_dtype
from models.net_config import NetConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def f64():
    with default_dtype("f64"):
        yield


@pytest.fixture
def rng() -> RngState:
    return RngState(0)


@pytest.fixture
def np_rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def tiny_net() -> NetConfig:
    return NetConfig(base_channels=4, blocks_per_scale=1, d_state=2, n_experts=2, dtype="f64")


def write_png(path: Path, pixels: np.ndarray) -> Path:
    """Write an ``(H, W, 3)`` uint8 RGB array."""
    path.parent.mkdir(parents=True, exist_ok=True)
    assert cv2.imwrite(str(path), cv2.cvtColor(pixels, cv2.COLOR_RGB2BGR))
    return path


def make_split(root: Path, split: str, names: list[str], size: int = 16, seed: int = 0, identical: bool = False) -> Path:
    """``root/split/{input,target}`` with one random image pair per name."""
    generator = np.random.default_rng(seed)
    for name in names:
        target = generator.integers(0, 256, (size, size, 3), dtype=np.uint8)
        degraded = target if identical else (target * 0.6 + 20).astype(np.uint8)
        write_png(root / split / "input" / name, degraded)
        write_png(root / split / "target" / name, target)
    return root


@pytest.fixture
def paired_root(tmp_path: Path) -> Path:
    root = tmp_path / "data"
    make_split(root, "train", ["a.png", "b.png"], seed=1)
    make_split(root, "test", ["c.png"], seed=2)
    return root
