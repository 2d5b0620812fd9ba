import numpy as np
import pytest

from hypermv.backbone import BackboneConfig, embed_frames, extract, init_backbone
from hypermv.events import FrameVolume
from hypermv.numerics import DimensionError, Tensor
from hypermv.numerics.gradcheck import check_gradients
from hypermv.numerics import functional as F

CFG = BackboneConfig(channels=(4, 8, 8))


@pytest.fixture(scope="module")
def params():
    return init_backbone(CFG, seed=0)


def random_volumes(rng, V, T=3, Y=16, X=16):
    return [rng.normal(size=(T, Y, X)) for _ in range(V)]


def test_output_shape(params):
    out = extract(random_volumes(np.random.default_rng(0), 3, T=4), CFG, params, normalize=False)
    assert out.shape == (12, CFG.dim)


def test_dim_is_last_channel_count():
    assert BackboneConfig().dim == 64
    assert BackboneConfig().blocks == 4


def test_identical_views_give_identical_rows(params):
    vol = np.random.default_rng(1).normal(size=(3, 16, 16))
    out = extract([vol, vol.copy()], CFG, params, normalize=False).data
    assert np.array_equal(out[:3], out[3:])


def test_zero_volume_rows_all_equal(params):
    out = extract([np.zeros((3, 16, 16))] * 2, CFG, params, normalize=False).data
    assert np.array_equal(out, np.broadcast_to(out[0], out.shape))


def test_view_permutation_permutes_row_blocks(params):
    vols = random_volumes(np.random.default_rng(2), 3)
    out = extract(vols, CFG, params, normalize=False).data
    perm = [2, 0, 1]
    out_p = extract([vols[i] for i in perm], CFG, params, normalize=False).data
    T = 3
    for new, old in enumerate(perm):
        assert np.array_equal(out_p[new * T:(new + 1) * T], out[old * T:(old + 1) * T])


def test_frame_permutation_equivariance(params):
    rng = np.random.default_rng(3)
    frames = rng.normal(size=(7, 16, 16))
    perm = rng.permutation(7)
    a = embed_frames(Tensor(frames), CFG, params).data
    b = embed_frames(Tensor(frames[perm]), CFG, params).data
    assert np.array_equal(a[perm], b)


def test_frame_volume_input_is_normalised(params):
    frames = np.random.default_rng(4).integers(-5, 6, size=(3, 16, 16))
    a = extract([FrameVolume(frames)], CFG, params).data
    b = extract([frames / np.abs(frames).max()], CFG, params, normalize=False).data
    assert np.allclose(a, b, atol=1e-15)


def test_too_small_input_raises():
    cfg = BackboneConfig()
    with pytest.raises(DimensionError):
        embed_frames(Tensor(np.zeros((1, 0, 8))), cfg, init_backbone(cfg, 0))


def test_mismatched_views_raise(params):
    with pytest.raises(DimensionError):
        extract([np.zeros((3, 16, 16)), np.zeros((2, 16, 16))], CFG, params, normalize=False)


def test_init_deterministic_in_seed():
    a, b, c = init_backbone(CFG, 5), init_backbone(CFG, 5), init_backbone(CFG, 6)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    assert not np.array_equal(a["backbone.conv0.weight"].data, c["backbone.conv0.weight"].data)


def test_init_biases_zero():
    p = init_backbone(CFG, 0)
    assert all(not p[f"backbone.conv{i}.bias"].data.any() for i in range(CFG.blocks))


def test_init_variance_matches_fan_in():
    # 64 * 64 * 3 * 3 = 36864 draws in the last block of the default config
    cfg = BackboneConfig()
    w = init_backbone(cfg, 0)["backbone.conv3.weight"].data
    fan_in = 32 * 9
    assert w.size >= 10_000
    # uniform(-b, b) has variance b^2 / 3 = 2 / fan_in; sample sd of the estimate is ~0.7%
    assert w.var() == pytest.approx(2.0 / fan_in, rel=0.05)
    assert np.abs(w).max() <= np.sqrt(6.0 / fan_in)


def test_backbone_gradients_match_finite_differences():
    cfg = BackboneConfig(channels=(2, 3))
    params = init_backbone(cfg, 1)
    frames = Tensor(np.random.default_rng(5).normal(size=(2, 6, 6)))
    w = Tensor(np.random.default_rng(6).normal(size=(3, 1)))
    leaves = list(params.values())
    errs = check_gradients(lambda: F.sum(F.matmul(embed_frames(frames, cfg, params), w)), leaves)
    assert max(errs) < 1e-4, errs
