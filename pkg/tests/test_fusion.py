import numpy as np
import pytest

from framework.errors import DimensionError
from framework.module import RngState
from framework.tensor import Tensor
from models.net_config import NetConfig
from models.outputs import SCALES, SkipSet
from services.channel import ChannelSelectiveScan
from services.fusion import MultiScaleMoE, MutualPromotion, mp_fuse
from services.spatial import SpatialSelectiveScan


def _net(**overrides):
    return NetConfig(base_channels=2, d_state=2, n_experts=2, dtype="f64", **overrides)


def _encoder_features(rng, batch=1, extent=8, widths=(2, 4, 8)):
    return [Tensor(rng.normal(size=(batch, w, extent >> i, extent >> i))) for i, w in enumerate(widths)]


def _skips(rng, branches=("spatial", "channel")):
    return SkipSet(
        features={
            branch: {scale: f for scale, f in zip(SCALES, _encoder_features(rng))} for branch in branches
        }
    )


def test_gather_concatenates_at_middle_resolution(f64, np_rng):
    moe = MultiScaleMoE("spatial", _net(), RngState(0))
    y_cat = moe.gather(*_encoder_features(np_rng))
    assert y_cat.shape == (1, 12, 4, 4)
    assert moe.width == 12


@pytest.mark.parametrize("kind, expert_type", [("spatial", SpatialSelectiveScan), ("channel", ChannelSelectiveScan)])
def test_experts_match_branch_kind(f64, np_rng, kind, expert_type):
    moe = MultiScaleMoE(kind, _net(), RngState(0))
    assert len(moe.experts) == 2
    assert all(isinstance(expert, expert_type) for expert in moe.experts)
    assert moe(*_encoder_features(np_rng)).shape == (1, 12, 4, 4)


def test_without_experts_output_is_the_concatenation(f64, np_rng):
    moe = MultiScaleMoE("channel", _net(use_ms_moe=False), RngState(0))
    features = _encoder_features(np_rng)
    assert moe.experts == []
    np.testing.assert_array_equal(moe(*features).data, moe.gather(*features).data)


def test_mp_fuse_adds_injection_to_every_skip(f64, np_rng):
    mp = MutualPromotion(_net(), RngState(0))
    y_s, y_c = Tensor(np_rng.normal(size=(1, 12, 4, 4))), Tensor(np_rng.normal(size=(1, 12, 4, 4)))
    skips = _skips(np_rng)
    fused = mp(y_s, y_c, skips)
    f = y_s + y_c
    for index, scale in enumerate(SCALES):
        injection = mp.moes[index](f).data
        for branch in ("spatial", "channel"):
            np.testing.assert_allclose(fused.get(branch, scale).data, injection + skips.get(branch, scale).data)


def test_missing_branch_feature_counts_as_zero(f64, np_rng):
    mp = MutualPromotion(_net(), RngState(0))
    y_s = Tensor(np_rng.normal(size=(1, 12, 4, 4)))
    skips = _skips(np_rng, branches=("spatial",))
    alone = mp(y_s, None, skips)
    with_zero = mp(y_s, Tensor(np.zeros((1, 12, 4, 4))), skips)
    for scale in SCALES:
        np.testing.assert_array_equal(alone.get("spatial", scale).data, with_zero.get("spatial", scale).data)


def test_mp_fuse_shape_checks(f64, np_rng):
    mp = MutualPromotion(_net(), RngState(0))
    with pytest.raises(DimensionError):
        mp_fuse(Tensor(np.zeros((1, 12, 4, 4))), Tensor(np.zeros((1, 12, 2, 2))), _skips(np_rng), mp.moes)
    with pytest.raises(DimensionError):
        mp_fuse(None, None, _skips(np_rng), mp.moes)


def test_skip_set_requires_every_scale(f64, np_rng):
    features = _encoder_features(np_rng)
    with pytest.raises(ValueError):
        SkipSet(features={"spatial": {SCALES[0]: features[0]}})


def test_mp_fuse_is_symmetric_in_the_branches(f64, np_rng):
    mp = MutualPromotion(_net(), RngState(0))
    y_s, y_c = Tensor(np_rng.normal(size=(1, 12, 4, 4))), Tensor(np_rng.normal(size=(1, 12, 4, 4)))
    skips = _skips(np_rng)
    forward, swapped = mp(y_s, y_c, skips), mp(y_c, y_s, skips)
    for branch in ("spatial", "channel"):
        for scale in SCALES:
            np.testing.assert_array_equal(forward.get(branch, scale).data, swapped.get(branch, scale).data)


def test_silent_experts_leave_skips_unchanged(f64, np_rng):
    mp = MutualPromotion(_net(), RngState(0))
    for moe in mp.moes:
        for param in moe.parameters():
            param.data = np.zeros_like(param.data)
    skips = _skips(np_rng)
    fused = mp(Tensor(np_rng.normal(size=(1, 12, 4, 4))), Tensor(np_rng.normal(size=(1, 12, 4, 4))), skips)
    for branch in ("spatial", "channel"):
        for scale in SCALES:
            np.testing.assert_array_equal(fused.get(branch, scale).data, skips.get(branch, scale).data)
