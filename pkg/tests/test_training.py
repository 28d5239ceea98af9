import csv
import json
from collections import Counter

import numpy as np
import pytest

from framework.errors import ConfigError, MetricError, OptimizationError, PreconditionError
from framework.module import Parameter, RngState
from framework.tensor import Tensor
from models.net_config import NetConfig
from models.outputs import SCALES, MultiScaleOutput, Scale
from models.train_config import RunConfig, TrainConfig
from services.checkpoints import checkpoint_path, load_network, save_run
from services.network import build
from services.optim import PairSampler, TrainState, adam_step, learning_rate
from services.training import (
    ALL_SCALES,
    METRICS_COLUMNS,
    cms_loss,
    downsample_gt,
    joint_loss,
    scale_for_iteration,
    train_loop,
    validate,
)


def _pairs(rng, count=2, extent=16):
    pairs = []
    for _ in range(count):
        target = rng.uniform(0.0, 1.0, (3, extent, extent))
        pairs.append((0.6 * target + 0.1, target))
    return pairs


def _run(tiny_net, **train):
    defaults = dict(batch_size=1, patch=8, total_iters=6, log_every=1, learning_rate=1e-3, seed=3)
    defaults.update(train)
    return RunConfig(net=tiny_net, train=TrainConfig(**defaults))


def _metrics(path):
    with path.open(encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def test_scale_cycle():
    assert [scale_for_iteration(k) for k in range(6)] == [Scale.FULL, Scale.HALF, Scale.QUARTER] * 2


def test_reference_pyramid_is_area_mean(f64):
    gt = Tensor(np.arange(16.0).reshape(1, 1, 4, 4).repeat(3, axis=1))
    pyramid = downsample_gt(gt)
    assert pyramid[Scale.QUARTER].shape == (1, 3, 1, 1)
    assert pyramid[Scale.QUARTER].data[0, 0, 0, 0] == pytest.approx(7.5)
    with pytest.raises(ConfigError):
        downsample_gt(Tensor(np.zeros((1, 3, 6, 8))))


def _output(rng, extent=8):
    maps = {scale: Tensor(rng.uniform(size=(1, 3, extent >> scale.index, extent >> scale.index))) for scale in SCALES}
    return MultiScaleOutput.combine(S=maps, C={s: Tensor(np.zeros(m.shape)) for s, m in maps.items()})


def test_cms_loss_is_mean_absolute_error_of_selected_scale(f64, np_rng):
    out = _output(np_rng)
    gts = {scale: Tensor(np.zeros(out.fused[scale].shape)) for scale in SCALES}
    loss, scale = cms_loss(out, gts, k=4)
    assert scale is Scale.HALF
    assert loss.item() == pytest.approx(np.mean(np.abs(out.fused[Scale.HALF].data)))


def test_joint_loss_sums_all_scales(f64, np_rng):
    out = _output(np_rng)
    gts = {scale: Tensor(np.zeros(out.fused[scale].shape)) for scale in SCALES}
    expected = sum(np.mean(np.abs(out.fused[scale].data)) for scale in SCALES)
    assert joint_loss(out, gts).item() == pytest.approx(expected)


def test_cms_loss_preconditions(f64, np_rng):
    out = _output(np_rng)
    gts = {scale: Tensor(np.zeros(out.fused[scale].shape)) for scale in SCALES}
    with pytest.raises(PreconditionError):
        cms_loss(out, {Scale.FULL: gts[Scale.FULL]}, k=0)
    gts[Scale.QUARTER].data[0, 0, 0, 0] = np.nan
    with pytest.raises(PreconditionError):
        cms_loss(out, gts, k=0)


def test_only_selected_scale_head_receives_gradient(tiny_net, np_rng):
    net = build(tiny_net, 0)
    registry = net.registry()
    target = Tensor(np_rng.uniform(size=(1, 3, 8, 8)))
    loss, scale = cms_loss(net(Tensor(np_rng.uniform(size=(1, 3, 8, 8)))), downsample_gt(target), k=2)
    loss.backward()
    assert scale is Scale.QUARTER
    for branch in ("spatial", "channel"):
        for index in range(3):
            grad = registry[f"branches.{branch}.heads.{index}.weight"].grad
            if index == scale.index:
                assert grad is not None and np.any(grad)
            else:
                assert grad is None or not np.any(grad)


def test_learning_rate_halves_at_milestones():
    cfg = TrainConfig(learning_rate=1e-3, total_iters=100)
    assert cfg.milestones() == [60, 80]
    assert [learning_rate(cfg, k) for k in (0, 59, 60, 79, 80, 99)] == [1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4, 2.5e-4]
    custom = TrainConfig(learning_rate=1.0, lr_halving_milestones=[5, 2])
    assert custom.milestones() == [2, 5]
    assert learning_rate(custom, 5) == 0.25


def _state(params):
    rng = RngState(0)
    return TrainState.fresh(params, rng, 1)


def test_first_adam_step_moves_by_learning_rate(f64):
    param = Parameter(np.array([1.0, -2.0, 0.5]))
    param.grad = np.array([0.3, -4.0, 1e-3])
    params = {"p": param}
    state = _state(params)
    cfg = TrainConfig(learning_rate=0.01)
    assert adam_step(params, state, cfg) == 0.01
    np.testing.assert_allclose(param.data, [0.99, -1.99, 0.49], atol=1e-6)
    assert state.iteration == 1


def test_non_finite_gradient_aborts_without_changes(f64):
    good, bad = Parameter(np.ones(2)), Parameter(np.ones(2))
    good.grad, bad.grad = np.ones(2), np.array([np.inf, 0.0])
    params = {"good": good, "bad": bad}
    state = _state(params)
    with pytest.raises(OptimizationError) as info:
        adam_step(params, state, TrainConfig())
    assert info.value.parameter == "bad"
    np.testing.assert_array_equal(good.data, np.ones(2))
    assert not np.any(state.m["good"])
    assert state.iteration == 0


def test_parameters_without_gradient_are_skipped(f64):
    param = Parameter(np.ones(2))
    params = {"p": param}
    adam_step(params, _state(params), TrainConfig())
    np.testing.assert_array_equal(param.data, np.ones(2))


def test_sampler_visits_every_pair_per_pass():
    sampler = PairSampler(5, RngState(1))
    first, second = sampler.next_indices(5), sampler.next_indices(5)
    assert sorted(first) == sorted(second) == list(range(5))
    restored = PairSampler(5, RngState(1), state=sampler.state())
    assert restored.cursor == sampler.cursor


def test_train_loop_writes_metrics_checkpoint_and_summary(tiny_net, np_rng, tmp_path):
    run = _run(tiny_net)
    net = build(run.net, run.train.seed)
    summary = train_loop(_pairs(np_rng), net, run, tmp_path)

    rows = _metrics(tmp_path / "metrics.csv")
    assert tuple(rows[0]) == METRICS_COLUMNS
    assert [row["iteration"] for row in rows] == [str(k) for k in range(6)]
    assert [row["selected_scale"] for row in rows] == ["1", "1/2", "1/4"] * 2
    assert all(np.isfinite(float(row["loss"])) for row in rows)

    assert summary.total_iterations == 6
    assert summary.best_iteration == 6
    assert summary.checkpoint == str(checkpoint_path(tmp_path, 6))
    assert sorted(p.name for p in (tmp_path / "checkpoints").iterdir()) == ["iter_000006.omk"]
    assert json.loads((tmp_path / "summary.json").read_text())["total_iterations"] == 6

    reloaded, metadata = load_network(summary.checkpoint)
    assert metadata["iteration"] == 6
    assert all(np.array_equal(reloaded.state_dict()[n], v) for n, v in net.state_dict().items())


def test_training_is_reproducible(tiny_net, np_rng, tmp_path):
    pairs = _pairs(np_rng)
    run = _run(tiny_net, total_iters=3)
    for name in ("a", "b"):
        train_loop(pairs, build(run.net, run.train.seed), run, tmp_path / name)
    losses = [[row["loss"] for row in _metrics(tmp_path / name / "metrics.csv")] for name in ("a", "b")]
    assert losses[0] == losses[1]


def test_resumed_run_matches_uninterrupted_run(tiny_net, np_rng, tmp_path):
    pairs = _pairs(np_rng, count=3)
    run = _run(tiny_net, checkpoint_every=3)
    straight = build(run.net, run.train.seed)
    train_loop(pairs, straight, run, tmp_path / "straight")

    resumed = build(run.net, run.train.seed)
    summary = train_loop(
        pairs, resumed, run, tmp_path / "resumed", resume=checkpoint_path(tmp_path / "straight", 3)
    )
    assert summary.total_iterations == 6
    for name, value in straight.state_dict().items():
        np.testing.assert_array_equal(resumed.state_dict()[name], value)
    tail = [row["loss"] for row in _metrics(tmp_path / "straight" / "metrics.csv")][3:]
    assert [row["loss"] for row in _metrics(tmp_path / "resumed" / "metrics.csv")] == tail


def test_joint_schedule_logs_all_scales(tiny_net, np_rng, tmp_path):
    run = _run(tiny_net, total_iters=2, loss_schedule="joint")
    train_loop(_pairs(np_rng), build(run.net, 0), run, tmp_path)
    assert {row["selected_scale"] for row in _metrics(tmp_path / "metrics.csv")} == {ALL_SCALES}


def test_small_images_are_resized_up_to_the_patch(tiny_net, np_rng, tmp_path):
    run = _run(tiny_net, total_iters=1, patch=12)
    summary = train_loop(_pairs(np_rng, extent=8), build(run.net, 0), run, tmp_path, val_images=_pairs(np_rng))
    assert summary.total_iterations == 1


def test_checkpoint_is_written_before_final_validation(tiny_net, np_rng, tmp_path):
    run = _run(tiny_net, total_iters=2)
    with pytest.raises(MetricError):
        train_loop(_pairs(np_rng), build(run.net, 0), run, tmp_path, val_images=_pairs(np_rng, extent=8))
    _, metadata = load_network(checkpoint_path(tmp_path, 2))
    assert metadata["iteration"] == 2


def test_saved_network_reloads_bit_identically(tiny_net, np_rng, tmp_path):
    net = build(tiny_net, 3)
    for param in net.parameters():
        param.data = np_rng.normal(scale=0.1, size=param.data.shape)
    path = save_run(tmp_path / "net.omk", net, RunConfig(net=tiny_net))
    loaded, _ = load_network(path)
    image = Tensor(np_rng.uniform(0.0, 1.0, (1, 3, 8, 8)))
    before, after = net(image), loaded(image)
    for scale in SCALES:
        np.testing.assert_array_equal(after.fused[scale].data, before.fused[scale].data)


def test_training_needs_pairs(tiny_net, tmp_path):
    run = _run(tiny_net)
    with pytest.raises(PreconditionError):
        train_loop([], build(run.net, 0), run, tmp_path)


@pytest.mark.slow
def test_cyclic_schedule_balances_scales(tiny_net, np_rng, tmp_path):
    run = _run(tiny_net, total_iters=300, log_every=100)
    train_loop(_pairs(np_rng), build(run.net, 0), run, tmp_path)
    counts = Counter(row["selected_scale"] for row in _metrics(tmp_path / "metrics.csv"))
    assert counts == {"1": 100, "1/2": 100, "1/4": 100}


@pytest.mark.slow
def test_tiny_network_overfits_two_images(np_rng, tmp_path):
    net_config = NetConfig(base_channels=8, blocks_per_scale=1, n_experts=2, d_state=4)
    run = RunConfig(
        net=net_config,
        train=TrainConfig(batch_size=2, patch=64, total_iters=2000, learning_rate=2e-3, log_every=200),
    )
    pairs = [(p[0].astype(np.float32), p[1].astype(np.float32)) for p in _pairs(np_rng, extent=64)]
    net = build(run.net, run.train.seed)
    train_loop(pairs, net, run, tmp_path)
    mean_psnr, _ = validate(net, pairs)
    assert mean_psnr >= 30.0


@pytest.mark.slow
@pytest.mark.parametrize(
    "ablation",
    [{"use_channel_branch": False}, {"use_spatial_branch": False}, {"use_mutual_promotion": False}],
)
def test_ablation_settings_train(np_rng, tmp_path, ablation):
    net_config = NetConfig(base_channels=4, d_state=2, n_experts=2, dtype="f64", **ablation)
    run = RunConfig(net=net_config, train=TrainConfig(batch_size=1, patch=8, total_iters=50, log_every=25))
    summary = train_loop(_pairs(np_rng), build(run.net, 0), run, tmp_path)
    assert np.isfinite(summary.final_loss)
