"""Adam with bias correction, the milestone learning-rate schedule and the
deterministic pair sampler, plus everything a resumed run needs to continue bit-identically."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

from framework.errors import OptimizationError
from framework.module import Parameter, RngState
from models.train_config import TrainConfig

log = logging.getLogger(__name__)


def learning_rate(cfg: TrainConfig, iteration: int) -> float:
    """Initial rate halved once for every milestone already reached."""
    crossed = sum(1 for milestone in cfg.milestones() if milestone <= iteration)
    return cfg.learning_rate * 0.5**crossed


class PairSampler:
    """Walks a shuffled permutation of pair indices, reshuffling when it runs out."""

    def __init__(self, count: int, rng: RngState, state: Optional[Mapping[str, Any]] = None):
        self.count = count
        self.rng = rng
        if state is None:
            self.permutation = rng.generator.permutation(count)
            self.cursor = 0
        else:
            self.restore(state)

    def next_indices(self, size: int) -> list[int]:
        picked = []
        for _ in range(size):
            if self.cursor == self.count:
                self.permutation = self.rng.generator.permutation(self.count)
                self.cursor = 0
            picked.append(int(self.permutation[self.cursor]))
            self.cursor += 1
        return picked

    def state(self) -> dict[str, Any]:
        return {"permutation": [int(i) for i in self.permutation], "cursor": self.cursor}

    def restore(self, state: Mapping[str, Any]) -> None:
        self.permutation = np.asarray(state["permutation"], dtype=np.int64)
        self.cursor = int(state["cursor"])


@dataclass
class TrainState:
    iteration: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    rng: RngState
    sampler: PairSampler
    best: dict[str, Optional[float]] = field(
        default_factory=lambda: {"psnr": None, "ssim": None, "iteration": None}
    )

    @classmethod
    def fresh(cls, params: Mapping[str, Parameter], rng: RngState, pair_count: int) -> "TrainState":
        return cls(
            iteration=0,
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
            rng=rng,
            sampler=PairSampler(pair_count, rng),
        )


def adam_step(params: Mapping[str, Parameter], state: TrainState, cfg: TrainConfig) -> float:
    """One Adam update from the gradients stored on ``params``; returns the rate used.

    Every gradient is checked before anything changes, so a non-finite one
    leaves parameters and moments untouched.
    """
    for name, param in params.items():
        if param.grad is not None and not np.all(np.isfinite(param.grad)):
            raise OptimizationError(name)
    lr = learning_rate(cfg, state.iteration)
    if state.iteration in cfg.milestones():
        log.info("learning rate halved to %.3g at iteration %d", lr, state.iteration)
    step = state.iteration + 1
    correction1 = 1.0 - cfg.beta1**step
    correction2 = 1.0 - cfg.beta2**step
    for name, param in params.items():
        if not param.trainable or param.grad is None:
            continue
        grad = param.grad
        m = state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * grad
        v = state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * grad * grad
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + cfg.adam_eps)
        param.data = (param.data - update).astype(param.dtype, copy=False)
    state.iteration = step
    return lr
