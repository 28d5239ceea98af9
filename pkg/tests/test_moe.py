import numpy as np
import pytest

from framework.errors import ConfigError, DimensionError
from framework.module import RngState
from framework.tensor import Tensor
from models.outputs import Scale
from services.moe import ConvMoE, FeedForwardMoE, GateNet, mixture


def test_gate_weights_are_a_distribution(f64, np_rng):
    gate = GateNet(4, 3, RngState(0))
    weights = gate(Tensor(np_rng.normal(size=(5, 4, 3, 3)))).data
    assert weights.shape == (5, 3)
    assert np.all(weights > 0)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-6)


def test_top_k_keeps_largest_weights_renormalized(f64, np_rng):
    x = Tensor(np_rng.normal(size=(4, 4, 2, 2)))
    dense = GateNet(4, 4, RngState(0))(x).data
    sparse = GateNet(4, 4, RngState(0), top_k=2)(x).data
    assert np.all((sparse > 0).sum(axis=1) == 2)
    np.testing.assert_allclose(sparse.sum(axis=1), 1.0, atol=1e-12)
    for row_dense, row_sparse in zip(dense, sparse):
        keep = np.argsort(-row_dense)[:2]
        np.testing.assert_allclose(row_sparse[keep], row_dense[keep] / row_dense[keep].sum())


def test_top_k_bounds():
    with pytest.raises(ConfigError):
        GateNet(4, 2, RngState(0), top_k=3)


def test_mixture_matches_brute_force(f64, np_rng):
    outputs = [Tensor(np_rng.normal(size=(3, 2, 4, 4))) for _ in range(3)]
    weights = np_rng.dirichlet(np.ones(3), size=3)
    mixed = mixture(outputs, Tensor(weights)).data
    for b in range(3):
        expected = sum(weights[b, i] * outputs[i].data[b] for i in range(3))
        assert np.max(np.abs(mixed[b] - expected)) <= 1e-7


def test_mixture_checks_weight_shape(f64):
    with pytest.raises(DimensionError):
        mixture([Tensor(np.zeros((2, 1)))], Tensor(np.ones((2, 2)) / 2))


def test_single_expert_mixture_is_the_expert(f64, np_rng):
    moe = FeedForwardMoE(4, 1, RngState(0))
    x = Tensor(np_rng.normal(size=(2, 4, 3, 3)))
    assert np.max(np.abs(moe(x).data - moe.experts[0](x).data)) <= 1e-7


def test_feed_forward_moe_matches_weighted_experts(f64, np_rng):
    moe = FeedForwardMoE(4, 3, RngState(1))
    x = Tensor(np_rng.normal(size=(2, 4, 3, 3)))
    weights = moe.weights(x).data
    expected = sum(weights[:, i, None, None, None] * moe.experts[i](x).data for i in range(3))
    assert np.max(np.abs(moe(x).data - expected)) <= 1e-7


def test_zero_experts_is_a_config_error():
    with pytest.raises(ConfigError):
        FeedForwardMoE(4, 0, RngState(0))


@pytest.mark.parametrize("scale, extent", [(1, 8), (2, 4), (3, 2)])
def test_conv_moe_resamples_to_its_scale(f64, np_rng, scale, extent):
    moe = ConvMoE(6, 5, scale, 2, RngState(0))
    assert moe(Tensor(np_rng.normal(size=(1, 6, 4, 4)))).shape == (1, 5, extent, extent)


def test_conv_moe_scale_index_range():
    with pytest.raises(ConfigError):
        ConvMoE(4, 4, 4, 2, RngState(0))
    assert ConvMoE(4, 4, Scale.HALF, 1, RngState(0)).scale is Scale.HALF


def test_mixture_is_linear_in_expert_outputs(f64, np_rng):
    first = [Tensor(np_rng.normal(size=(2, 3, 4, 4))) for _ in range(2)]
    second = [Tensor(np_rng.normal(size=(2, 3, 4, 4))) for _ in range(2)]
    weights = Tensor(np_rng.dirichlet(np.ones(2), size=2))
    summed = mixture([a + b for a, b in zip(first, second)], weights).data
    separate = mixture(first, weights).data + mixture(second, weights).data
    assert np.max(np.abs(summed - separate)) <= 1e-12


def test_gradient_reaches_every_expert(f64, np_rng):
    moe = FeedForwardMoE(4, 3, RngState(2))
    out = moe(Tensor(np_rng.normal(size=(2, 4, 3, 3))))
    (out * Tensor(np_rng.normal(size=out.shape))).sum().backward()
    for index, expert in enumerate(moe.experts):
        for param in expert.parameters():
            assert param.grad is not None and np.any(param.grad != 0), (index, param.shape)
    assert np.any(moe.gate.proj.weight.grad != 0)
