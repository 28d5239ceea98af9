"""Finite-difference oracle for reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from framework.errors import PreconditionError
from framework.tensor import Tensor, detect_anomaly, no_grad

DENOMINATOR_FLOOR = 1e-8
# share of the largest analytic gradient below which errors are measured absolutely
RELATIVE_FLOOR = 1e-3
# fourth-order central difference: (offset in eps, weight / 12)
STENCIL: tuple[tuple[float, float], ...] = ((2.0, -1.0), (1.0, 8.0), (-1.0, -8.0), (-2.0, 1.0))


def grad_check(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    *,
    seed: int = 0,
    max_elements: int | None = None,
) -> float:
    """Worst relative error between analytic and finite-difference gradients.

    ``fn`` rebuilds the graph from ``inputs`` (perturbed in place).  The output
    is reduced to a scalar with fixed random weights and differentiated with the
    four-point stencil.  Each error is divided by
    ``max(|analytic|, |numeric|, RELATIVE_FLOOR * g_max, DENOMINATOR_FLOOR)``
    where ``g_max`` is the largest analytic gradient over all inputs, so
    near-zero gradients are compared at the precision the objective carries.
    Every element is perturbed unless ``max_elements`` caps the positions per
    input; the capped positions are drawn without replacement from ``seed``.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise PreconditionError(f"grad_check eps must lie in [1e-6, 1e-4], got {eps}")
    for tensor in inputs:
        if tensor.dtype != np.float64:
            raise PreconditionError(f"grad_check needs float64 inputs, got {tensor.dtype} for shape {tensor.shape}")

    rng = np.random.default_rng(seed)
    with detect_anomaly():
        with no_grad():
            sample = fn()
        weights = rng.standard_normal(sample.shape) / np.sqrt(max(sample.size, 1))

        def objective() -> float:
            with no_grad():
                return float(np.sum(fn().data * weights))

        saved = [t.requires_grad for t in inputs]
        for tensor in inputs:
            tensor.requires_grad = True
            tensor.grad = None
        out = fn()
        (out * Tensor(weights)).sum().backward()
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]
        for tensor, flag in zip(inputs, saved):
            tensor.requires_grad = flag

        largest = max((float(np.max(np.abs(g))) for g in analytic if g.size), default=0.0)
        floor = max(DENOMINATOR_FLOOR, RELATIVE_FLOOR * largest)
        worst = 0.0
        for tensor, grad in zip(inputs, analytic):
            positions = list(np.ndindex(tensor.shape))
            if max_elements is not None and len(positions) > max_elements:
                chosen = rng.choice(len(positions), size=max_elements, replace=False)
                positions = [positions[i] for i in sorted(chosen)]
            for index in positions:
                original = tensor.data[index]
                total = 0.0
                for offset, weight in STENCIL:
                    tensor.data[index] = original + offset * eps
                    total += weight * objective()
                tensor.data[index] = original
                numeric = total / (12.0 * eps)
                exact = float(grad[index])
                denominator = max(abs(exact), abs(numeric), floor)
                worst = max(worst, abs(exact - numeric) / denominator)
    return worst
