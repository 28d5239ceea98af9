"""Fixed battery of finite-difference checks run by ``grad-check``.

Every entry builds a small f64 graph from a fresh seeded generator and is
compared against four-point differences at its own tolerance: 1e-6 for
primitives, 1e-5 for composed blocks, 1e-4 for the whole network.
Primitives and blocks are checked at every element of every input.  The
network entry perturbs NETWORK_SAMPLE positions of the image and of every
ninth parameter tensor plus the heads.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from framework import ops
from framework.errors import ConfigError, NonFiniteError
from framework.gradcheck import grad_check
from framework.module import Module, Parameter, RngState
from framework.tensor import Tensor, concat, default_dtype
from models.net_config import NetConfig
from models.outputs import SCALES
from models.report import GradCheckItem
from services.channel import ChannelMambaBlock, ChannelSelectiveScan
from services.moe import FeedForwardMoE
from services.network import build
from services.scan import linear_recurrence
from services.spatial import SpatialMambaBlock, SpatialSelectiveScan
from services.ssm import SsmParams, discretize, ssm_layer

log = logging.getLogger(__name__)

PRIMITIVE_TOL = 1e-6
BLOCK_TOL = 1e-5
NETWORK_TOL = 1e-4
BATTERY_EPS = 1e-4
NETWORK_SAMPLE = 4

Graph = tuple[Callable[[], Tensor], list[Tensor]]

BATTERY_NET = NetConfig(
    base_channels=4, blocks_per_scale=1, expansion=2.0, d_state=2, n_experts=2, dtype="f64", evaluator="parallel"
)


@dataclass(frozen=True)
class BatteryEntry:
    name: str
    tolerance: float
    build: Callable[[RngState], Graph]
    max_elements: Optional[int] = None


def _leaf(rng: RngState, *shape: int, scale: float = 1.0) -> Tensor:
    return Tensor(rng.normal(scale, shape), requires_grad=True)


def _with_params(fn: Callable[[], Tensor], module: Module, *leaves: Tensor) -> Graph:
    return fn, [*leaves, *module.parameters()]


def _linear(rng: RngState) -> Graph:
    x, w, b = _leaf(rng, 3, 4), _leaf(rng, 4, 5), _leaf(rng, 5)
    return (lambda: ops.linear(x, w, b)), [x, w, b]


def _conv(stride: int, groups: int) -> Callable[[RngState], Graph]:
    def make(rng: RngState) -> Graph:
        c_in = 3
        c_out = 3 if groups > 1 else 2
        x = _leaf(rng, 1, c_in, 5, 5)
        w = _leaf(rng, c_out, c_in // groups, 3, 3)
        b = _leaf(rng, c_out)
        return (lambda: ops.conv2d(x, w, b, stride=stride, padding=1, groups=groups)), [x, w, b]

    return make


def _layer_norm(rng: RngState) -> Graph:
    x, gamma, beta = _leaf(rng, 2, 3, 6), _leaf(rng, 6), _leaf(rng, 6)
    return (lambda: ops.layer_norm(x, gamma, beta)), [x, gamma, beta]


def _activation(kind: str) -> Callable[[RngState], Graph]:
    def make(rng: RngState) -> Graph:
        x = _leaf(rng, 3, 5, scale=2.0)
        return (lambda: ops.activation(x, kind)), [x]

    return make


def _pool(rng: RngState) -> Graph:
    x = _leaf(rng, 2, 3, 4, 4)
    return (lambda: ops.global_avg_pool(x)), [x]


def _resample(factor: str, mode: str) -> Callable[[RngState], Graph]:
    def make(rng: RngState) -> Graph:
        x = _leaf(rng, 1, 2, 4, 4)
        return (lambda: ops.resample(x, factor, mode)), [x]

    return make


def _exprel(rng: RngState) -> Graph:
    z = Tensor(np.concatenate([[0.0], rng.uniform(-3.0, 3.0, (7,))]), requires_grad=True)
    return (lambda: ops.exprel(z)), [z]


def _recurrence(rng: RngState) -> Graph:
    a = Tensor(rng.uniform(0.1, 0.95, (2, 6, 3)), requires_grad=True)
    b = _leaf(rng, 2, 6, 3)
    return (lambda: linear_recurrence(a, b)), [a, b]


def _discretize(rng: RngState) -> Graph:
    log_a = Tensor(np.log(np.geomspace(1.0, 3.0, 3)), requires_grad=True)
    b = _leaf(rng, 1, 4, 3)
    delta = Tensor(rng.uniform(0.05, 1.0, (1, 4, 2)), requires_grad=True)

    def fn() -> Tensor:
        disc = discretize(-log_a.exp(), b, delta)
        return disc.A_bar + disc.B_bar

    return fn, [log_a, b, delta]


def _ssm_layer(rng: RngState) -> Graph:
    params = SsmParams(2, 2, rng)
    x = _leaf(rng, 1, 4, 2)
    return _with_params(lambda: ssm_layer(x, params), params, x)


def _s_ssm(rng: RngState) -> Graph:
    module = SpatialSelectiveScan(BATTERY_NET.spatial(4), rng)
    x = _leaf(rng, 1, 4, 4, 4)
    return _with_params(lambda: module(x), module, x)


def _c_ssm(rng: RngState) -> Graph:
    module = ChannelSelectiveScan(BATTERY_NET.channel(4), rng)
    x = _leaf(rng, 1, 4, 4, 4)
    return _with_params(lambda: module(x), module, x)


def _ff_moe(rng: RngState) -> Graph:
    module = FeedForwardMoE(4, 2, rng)
    x = _leaf(rng, 2, 4, 3, 3)
    return _with_params(lambda: module(x), module, x)


def _block(block_type: type[Module]) -> Callable[[RngState], Graph]:
    def make(rng: RngState) -> Graph:
        block = block_type(BATTERY_NET, 4, rng)
        x_n, y_prev = _leaf(rng, 1, 4, 4, 4), _leaf(rng, 1, 4, 4, 4)
        return _with_params(lambda: block(x_n, y_prev), block, x_n, y_prev)

    return make


def _network(rng: RngState) -> Graph:
    net = build(BATTERY_NET, rng)
    params = net.registry()
    # zero-initialized heads would hide every upstream gradient
    for name, param in params.items():
        if ".heads." in name:
            param.data = rng.normal(0.1, param.shape)
    image = Tensor(rng.uniform(0.0, 1.0, (1, 3, 8, 8)), requires_grad=True)
    sampled: list[Parameter] = [p for i, p in enumerate(params.values()) if i % 9 == 0 or ".heads." in p.name]

    def fn() -> Tensor:
        out = net(image)
        return concat([out.fused[scale].reshape((-1,)) for scale in SCALES], axis=0)

    return fn, [image, *sampled]


BATTERY: tuple[BatteryEntry, ...] = (
    BatteryEntry("linear", PRIMITIVE_TOL, _linear),
    BatteryEntry("conv2d", PRIMITIVE_TOL, _conv(stride=1, groups=1)),
    BatteryEntry("conv2d_strided", PRIMITIVE_TOL, _conv(stride=2, groups=1)),
    BatteryEntry("conv2d_depthwise", PRIMITIVE_TOL, _conv(stride=1, groups=3)),
    BatteryEntry("layer_norm", PRIMITIVE_TOL, _layer_norm),
    BatteryEntry("silu", PRIMITIVE_TOL, _activation("silu")),
    BatteryEntry("sigmoid", PRIMITIVE_TOL, _activation("sigmoid")),
    BatteryEntry("softplus", PRIMITIVE_TOL, _activation("softplus")),
    BatteryEntry("softmax", PRIMITIVE_TOL, _activation("softmax")),
    BatteryEntry("global_avg_pool", PRIMITIVE_TOL, _pool),
    BatteryEntry("resample_down2_area", PRIMITIVE_TOL, _resample("down2", "area_mean")),
    BatteryEntry("resample_down2_nearest", PRIMITIVE_TOL, _resample("down2", "nearest")),
    BatteryEntry("resample_up2_nearest", PRIMITIVE_TOL, _resample("up2", "nearest")),
    BatteryEntry("exprel", PRIMITIVE_TOL, _exprel),
    BatteryEntry("linear_recurrence", PRIMITIVE_TOL, _recurrence),
    BatteryEntry("discretize", BLOCK_TOL, _discretize),
    BatteryEntry("ssm_layer", BLOCK_TOL, _ssm_layer),
    BatteryEntry("s_ssm", BLOCK_TOL, _s_ssm),
    BatteryEntry("c_ssm", BLOCK_TOL, _c_ssm),
    BatteryEntry("ff_moe", BLOCK_TOL, _ff_moe),
    BatteryEntry("sm_block", BLOCK_TOL, _block(SpatialMambaBlock)),
    BatteryEntry("cm_block", BLOCK_TOL, _block(ChannelMambaBlock)),
    BatteryEntry("network", NETWORK_TOL, _network, max_elements=NETWORK_SAMPLE),
)


def battery_names() -> list[str]:
    return [entry.name for entry in BATTERY]


def run_battery(only: Optional[Sequence[str]] = None, seed: int = 0) -> list[GradCheckItem]:
    """Check every entry (or the ``only`` subset) in battery order."""
    if only:
        unknown = sorted(set(only) - set(battery_names()))
        if unknown:
            raise ConfigError(f"unknown grad-check item(s) {unknown}; available: {', '.join(battery_names())}")
    entries = [entry for entry in BATTERY if not only or entry.name in only]
    items: list[GradCheckItem] = []
    with default_dtype("f64"):
        for entry in entries:
            fn, inputs = entry.build(RngState(seed))
            try:
                error = grad_check(fn, inputs, BATTERY_EPS, seed=seed, max_elements=entry.max_elements)
                item = GradCheckItem(name=entry.name, max_rel_error=error, tolerance=entry.tolerance)
            except NonFiniteError as exc:
                item = GradCheckItem(name=entry.name, max_rel_error=float("inf"), tolerance=entry.tolerance, error=exc.detail)
            log.debug("grad-check %s: %.3e (tol %.0e)", item.name, item.max_rel_error, item.tolerance)
            items.append(item)
    return items
