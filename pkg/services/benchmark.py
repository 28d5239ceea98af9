from __future__ import annotations

import csv
import itertools
import logging
import time
from typing import Iterable, Sequence, TextIO

import numpy as np

from framework.errors import ConfigError
from framework.tensor import resolve_dtype
from models.report import BenchRow
from services.scan import EVALUATORS, run_kernel

log = logging.getLogger(__name__)

BENCH_COLUMNS = ("evaluator", "L", "N", "D", "wall_time_ns", "max_abs_diff_vs_sequential")


def random_recurrence(
    rng: np.random.Generator, batch: int, length: int, d_state: int, channels: int, dtype: str = "f64"
) -> tuple[np.ndarray, np.ndarray]:
    """Decays in (0, 1) and standard-normal drives of shape ``(batch, L, D, N)``."""
    shape = (batch, length, channels, d_state)
    dt = resolve_dtype(dtype)
    a = np.exp(-rng.uniform(1e-3, 2.0, shape)).astype(dt)
    b = rng.standard_normal(shape).astype(dt)
    return a, b


def bench_scan(
    lengths: Sequence[int],
    states: Sequence[int],
    channels: Sequence[int],
    *,
    batch: int = 1,
    repeats: int = 3,
    seed: int = 0,
    dtype: str = "f64",
) -> list[BenchRow]:
    """Best-of-``repeats`` wall time of every kernel per (L, N, D), L ascending."""
    if min((*lengths, *states, *channels, batch, repeats), default=0) < 1:
        raise ConfigError("bench-scan extents, batch and repeats must all be positive")
    rng = np.random.default_rng(seed)
    rows: list[BenchRow] = []
    for length, d_state, width in itertools.product(sorted(lengths), states, channels):
        a, b = random_recurrence(rng, batch, length, d_state, width, dtype)
        reference = run_kernel(a, b, "sequential")
        for evaluator in EVALUATORS:
            best = None
            for _ in range(repeats):
                started = time.perf_counter_ns()
                h = run_kernel(a, b, evaluator)
                elapsed = time.perf_counter_ns() - started
                best = elapsed if best is None else min(best, elapsed)
            rows.append(
                BenchRow(
                    evaluator=evaluator,
                    L=length,
                    N=d_state,
                    D=width,
                    wall_time_ns=best,
                    max_abs_diff_vs_sequential=float(np.max(np.abs(h - reference))),
                )
            )
        log.debug("benchmarked L=%d N=%d D=%d", length, d_state, width)
    return rows


def write_bench_csv(rows: Iterable[BenchRow], handle: TextIO) -> None:
    writer = csv.writer(handle)
    writer.writerow(BENCH_COLUMNS)
    for row in rows:
        writer.writerow([getattr(row, column) for column in BENCH_COLUMNS])
