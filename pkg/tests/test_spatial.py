import numpy as np
import pytest
from scipy import signal

from framework.errors import DimensionError
from framework.module import RngState
from framework.tensor import Tensor
from models.net_config import NetConfig, SSsmConfig
from services.spatial import (
    SCAN_ORDERS,
    ScanOrder,
    SpatialMambaBlock,
    SpatialSelectiveScan,
    flatten_2d,
    unflatten_2d,
)

GRID = np.arange(6.0).reshape(1, 1, 2, 3)


@pytest.mark.parametrize(
    "order, expected",
    [
        (ScanOrder.ROW_FORWARD, [0, 1, 2, 3, 4, 5]),
        (ScanOrder.ROW_BACKWARD, [5, 4, 3, 2, 1, 0]),
        (ScanOrder.COL_FORWARD, [0, 3, 1, 4, 2, 5]),
        (ScanOrder.COL_BACKWARD, [5, 2, 4, 1, 3, 0]),
    ],
)
def test_traversal_orders(f64, order, expected):
    seq = flatten_2d(Tensor(GRID), order)
    assert seq.shape == (1, 6, 1)
    assert seq.data[0, :, 0].tolist() == expected
    np.testing.assert_array_equal(unflatten_2d(seq, order, 2, 3).data, GRID)


def test_merge_order_is_fixed():
    assert [order.value for order in SCAN_ORDERS] == ["row_forward", "row_backward", "col_forward", "col_backward"]


def test_unflatten_checks_length(f64):
    with pytest.raises(DimensionError):
        unflatten_2d(Tensor(np.zeros((1, 5, 1))), ScanOrder.ROW_FORWARD, 2, 3)


def _module(channels=3, d_state=2):
    return SpatialSelectiveScan(SSsmConfig(channels=channels, expansion=2.0, d_state=d_state), RngState(0))


def test_output_keeps_input_shape(f64, np_rng):
    module = _module()
    assert module(Tensor(np_rng.normal(size=(2, 3, 4, 5)))).shape == (2, 3, 4, 5)


def test_expanded_width_uses_floor(f64):
    module = SpatialSelectiveScan(SSsmConfig(channels=3, expansion=1.5), RngState(0))
    assert module.conv.weight.shape == (4, 1, 3, 3)


def test_each_direction_has_its_own_parameters(f64):
    names = [name for name in _module().registry() if name.startswith("ssms.")]
    assert {name.split(".")[1] for name in names} == {order.value for order in SCAN_ORDERS}


def test_forward_row_scan_is_causal(f64, np_rng):
    module = _module()
    features = np_rng.normal(size=(1, 6, 3, 3))
    changed = features.copy()
    changed[:, :, 2, 2] += 5.0
    before = module.scan_direction(Tensor(features), ScanOrder.ROW_FORWARD).data
    after = module.scan_direction(Tensor(changed), ScanOrder.ROW_FORWARD).data
    np.testing.assert_array_equal(before[:, :, :2], after[:, :, :2])
    assert not np.allclose(before[:, :, 2, 2], after[:, :, 2, 2])


def test_backward_row_scan_sees_the_future(f64, np_rng):
    module = _module()
    features = np_rng.normal(size=(1, 6, 3, 3))
    changed = features.copy()
    changed[:, :, 2, 2] += 5.0
    before = module.scan_direction(Tensor(features), ScanOrder.ROW_BACKWARD).data
    after = module.scan_direction(Tensor(changed), ScanOrder.ROW_BACKWARD).data
    assert not np.allclose(before[:, :, 0, 0], after[:, :, 0, 0])


def test_merged_directions_are_layer_normalized(f64, np_rng):
    out = _module().scanned_branch(Tensor(np_rng.normal(size=(1, 3, 4, 4)))).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-10)


def test_channel_mismatch_is_rejected(f64):
    with pytest.raises(DimensionError):
        _module()(Tensor(np.zeros((1, 4, 4, 4))))


def test_block_adds_injected_input(f64, np_rng):
    net = NetConfig(base_channels=3, d_state=2, n_experts=2, dtype="f64")
    block = SpatialMambaBlock(net, 3, RngState(0))
    x_n, y_prev = np_rng.normal(size=(1, 3, 4, 4)), np_rng.normal(size=(1, 3, 4, 4))
    injected = block(Tensor(x_n), Tensor(y_prev)).data
    summed = block(None, Tensor(x_n + y_prev)).data
    np.testing.assert_allclose(injected, summed, atol=1e-12)
    with pytest.raises(DimensionError):
        block(Tensor(np.zeros((1, 3, 2, 2))), Tensor(y_prev))


def _silu(v):
    return v / (1.0 + np.exp(-v))


def _ssm_by_hand(u, params):
    """Left-to-right recurrence over a ``(L, D)`` sequence with plain numpy."""
    delta = np.logaddexp(0.0, u @ params.delta_down.weight.data @ params.delta_up.weight.data + params.delta_bias.data)
    b, c = u @ params.B_proj.weight.data, u @ params.C_proj.weight.data
    a = -np.exp(params.log_A.data)
    h = np.zeros((u.shape[1], a.shape[0]))
    out = np.empty_like(u)
    for t in range(u.shape[0]):
        z = delta[t][:, None] * a[None, :]
        h = np.exp(z) * h + np.expm1(z) / z * delta[t][:, None] * b[t][None, :] * u[t][:, None]
        out[t] = h @ c[t] + params.D_skip.data * u[t]
    return out


def _linear(layer, v):
    return v @ layer.weight.data + layer.bias.data


def _to_sequence(f, order):
    seq = f.transpose(2, 1, 0) if order.column_major else f.transpose(1, 2, 0)
    seq = seq.reshape(-1, f.shape[0])
    return seq[::-1] if order.reversed else seq


def _to_grid(seq, order, height, width):
    seq = seq[::-1] if order.reversed else seq
    if order.column_major:
        return seq.reshape(width, height, -1).transpose(2, 1, 0)
    return seq.reshape(height, width, -1).transpose(2, 0, 1)


def test_forward_matches_hand_composition(f64, np_rng):
    module = _module(channels=3, d_state=2)
    x = np_rng.normal(size=(1, 3, 3, 4))
    pixels = x[0].transpose(1, 2, 0)

    expanded = _linear(module.in_proj_a, pixels).transpose(2, 0, 1)
    kernel, bias = module.conv.weight.data, module.conv.bias.data
    conv = np.stack([signal.correlate2d(expanded[c], kernel[c, 0], mode="same") + bias[c] for c in range(len(bias))])
    features = _silu(conv)
    merged = sum(
        _to_grid(_ssm_by_hand(_to_sequence(features, order), module.ssms[order.value]), order, 3, 4)
        for order in SCAN_ORDERS
    ).transpose(1, 2, 0)
    mean, var = merged.mean(-1, keepdims=True), merged.var(-1, keepdims=True)
    normed = (merged - mean) / np.sqrt(var + module.norm.eps) * module.norm.gamma.data + module.norm.beta.data
    gated = normed * _silu(_linear(module.in_proj_b, pixels))
    expected = _linear(module.out_proj, gated).transpose(2, 0, 1)

    np.testing.assert_allclose(module(Tensor(x)).data[0], expected, atol=1e-10)


def test_backward_row_scan_is_the_flipped_forward_scan(f64, np_rng):
    module = _module()
    features = np_rng.normal(size=(2, 6, 3, 4))
    backward = module.scan_direction(Tensor(features), ScanOrder.ROW_BACKWARD).data
    # run the backward direction's parameters as a forward scan over the flipped map
    module.ssms[ScanOrder.ROW_FORWARD.value] = module.ssms[ScanOrder.ROW_BACKWARD.value]
    flipped = module.scan_direction(Tensor(features[:, :, ::-1, ::-1].copy()), ScanOrder.ROW_FORWARD).data
    np.testing.assert_allclose(backward, flipped[:, :, ::-1, ::-1], atol=1e-12)


def test_zeroed_block_passes_its_input_through(f64, np_rng):
    net = NetConfig(base_channels=3, d_state=2, n_experts=2, dtype="f64")
    block = SpatialMambaBlock(net, 3, RngState(0))
    for param in block.parameters():
        param.data = np.zeros_like(param.data)
    x_n, y_prev = np_rng.normal(size=(1, 3, 4, 4)), np_rng.normal(size=(1, 3, 4, 4))
    np.testing.assert_array_equal(block(Tensor(x_n), Tensor(y_prev)).data, x_n + y_prev)
