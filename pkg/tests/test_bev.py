import numpy as np
import pytest

from coopdrive.bev import (BEVFeature, MultiViewImages, PILLAR_HEIGHTS,
                           backbone_extract, encode_bev, init_encoder_weights,
                           spatial_cross_attention, view_references)
from coopdrive.bev import init_conv_stack
from coopdrive.geometry import BEVGrid, default_rig, project_pillar


def make_images(h=32, w=48, fill=0.5, n=6):
    return MultiViewImages(tuple(np.full((h, w, 3), fill) for _ in range(n)))


# ---------------------------------------------------------------------------
# backbone


def test_backbone_arity_and_stride():
    stack = init_conv_stack(0, "t", channels=8)
    feats = backbone_extract(make_images(32, 48), stack)
    assert len(feats.views) == 6
    assert feats.stride == 8
    assert all(v.shape == (4, 6, 8) for v in feats.views)


def test_backbone_constant_input_constant_interior():
    stack = init_conv_stack(1, "t", channels=8)
    feats = backbone_extract(make_images(48, 64, fill=0.7), stack)
    interior = feats.views[0][1:-1, 1:-1]
    assert np.allclose(interior, interior[0, 0], atol=1e-9)


def test_backbone_weight_sharing_identical_views():
    stack = init_conv_stack(2, "t", channels=8)
    rng = np.random.default_rng(0)
    img = rng.random((32, 48, 3))
    feats = backbone_extract(MultiViewImages(tuple(img.copy() for _ in range(6))),
                             stack)
    for v in feats.views[1:]:
        assert np.array_equal(v, feats.views[0])


def test_multi_view_images_validation():
    with pytest.raises(ValueError):
        make_images(n=5)
    with pytest.raises(ValueError):
        MultiViewImages(tuple(np.zeros((4, 4, 3)) for _ in range(5))
                        + (np.zeros((4, 6, 3)),))


def test_backbone_rejects_odd_extents():
    stack = init_conv_stack(3, "t", channels=8)
    with pytest.raises(ValueError):
        backbone_extract(make_images(33, 48), stack)


# ---------------------------------------------------------------------------
# visibility and references


def test_view_references_match_projection_oracle():
    grid = BEVGrid(10, 10, 2.0)
    rig = default_rig()
    stride = 8
    refs = view_references(grid, rig, PILLAR_HEIGHTS, stride)
    assert len(refs) == 6
    for view_idx in (0, 3):
        visible, coords = refs[view_idx]
        for cell_flat in range(0, 100, 7):
            i, j = divmod(cell_flat, 10)
            pillar = project_pillar(grid, (i, j), PILLAR_HEIGHTS, rig, view_idx)
            vis_oracle = any(v for _u, _v, v in pillar)
            assert visible[cell_flat] == vis_oracle
            if vis_oracle:
                us = [u for u, _v, vis in pillar if vis]
                vs = [v for _u, v, vis in pillar if vis]
                assert coords[cell_flat, 0] == pytest.approx(np.mean(vs) / stride)
                assert coords[cell_flat, 1] == pytest.approx(np.mean(us) / stride)


def test_every_cell_seen_somewhere():
    grid = BEVGrid(10, 10, 2.0)
    refs = view_references(grid, default_rig(), PILLAR_HEIGHTS, 8)
    seen = np.zeros(100, dtype=bool)
    for visible, _ in refs:
        seen |= visible
    # the cell under the rig itself may project outside every image
    assert seen.sum() >= 95


# ---------------------------------------------------------------------------
# spatial cross attention


def test_invisible_cells_pass_through():
    from test_attention import degenerate_params
    from coopdrive.bev import MultiViewFeatures
    c = 4
    rng = np.random.default_rng(1)
    q = rng.normal(size=(9, c))
    fmap = rng.normal(size=(3, 3, c))
    feats = MultiViewFeatures(tuple(fmap for _ in range(6)), 8)
    refs = [(np.zeros(9, dtype=bool), np.zeros((9, 2))) for _ in range(6)]
    out = spatial_cross_attention(q, feats, refs, degenerate_params(c))
    assert np.array_equal(out, q)


def test_two_equal_views_average_to_single_view_update():
    from test_attention import degenerate_params
    from coopdrive.bev import MultiViewFeatures
    c = 4
    rng = np.random.default_rng(2)
    q = rng.normal(size=(4, c))
    fmap = rng.normal(size=(3, 3, c))
    feats = MultiViewFeatures(tuple(fmap for _ in range(6)), 8)
    vis = np.ones(4, dtype=bool)
    coords = rng.uniform(0, 2, size=(4, 2))
    none = (np.zeros(4, dtype=bool), np.zeros((4, 2)))
    one = spatial_cross_attention(
        q, feats, [(vis, coords)] + [none] * 5, degenerate_params(c))
    two = spatial_cross_attention(
        q, feats, [(vis, coords), (vis, coords)] + [none] * 4, degenerate_params(c))
    assert np.allclose(one, two, atol=1e-12)


# ---------------------------------------------------------------------------
# full encoder


def test_encode_bev_output_shape():
    grid = BEVGrid(8, 8, 2.0)
    rig = default_rig()
    weights = init_encoder_weights(grid, 8, 0, "t", layers=2)
    out = encode_bev(make_images(), rig, grid, weights)
    assert isinstance(out, BEVFeature)
    assert out.data.shape == (8, 8, 8)


def test_encode_bev_zeroed_updates_return_prior():
    from coopdrive.attention import zeroed_output
    grid = BEVGrid(6, 6, 2.0)
    rig = default_rig()
    weights = init_encoder_weights(grid, 8, 1, "t", layers=2)
    for layer in weights.layers:
        layer.attn = zeroed_output(layer.attn)
        layer.mlp_w2 = np.zeros_like(layer.mlp_w2)
    out = encode_bev(make_images(), rig, grid, weights)
    assert np.array_equal(out.data.reshape(36, 8), weights.q_init)


def test_encode_bev_deterministic():
    grid = BEVGrid(6, 6, 2.0)
    rig = default_rig()
    weights = init_encoder_weights(grid, 8, 2, "t", layers=2)
    imgs = make_images()
    a = encode_bev(imgs, rig, grid, weights)
    b = encode_bev(imgs, rig, grid, weights)
    assert np.array_equal(a.data, b.data)


def test_bev_feature_validation():
    grid = BEVGrid(4, 4, 1.0)
    with pytest.raises(ValueError):
        BEVFeature(grid, np.zeros((3, 4, 2)))
    with pytest.raises(ValueError):
        BEVFeature(grid, np.full((4, 4, 1), np.nan))
