"""Prediction head, box decoding, GIoU, focal loss, objective assembly."""
import numpy as np
import pytest

from tokentrack.autodiff import Tensor, tsum, mul, grad_check
from tokentrack.boxes import BoundingBox, giou, iou
from tokentrack.config import ModelConfig
from tokentrack.heads import CenterHead, HeadMaps, decode_box, tokens_to_grid, cosine_window
from tokentrack.losses import (
    clip_loss, focal_loss, frame_loss_terms, gaussian_radius, giou_pair,
    make_frame_target, L1_WEIGHT, GIOU_WEIGHT,
)
from tokentrack.rng import Rng


def make_head(dim=64, seed=0):
    cfg = ModelConfig(dim=dim)
    return CenterHead(Rng(seed, ("head",)), cfg), cfg


def make_maps(score, size, offset):
    return HeadMaps(score=Tensor(np.asarray(score, dtype=np.float64)),
                    size=Tensor(np.asarray(size, dtype=np.float64)),
                    offset=Tensor(np.asarray(offset, dtype=np.float64)))


# ------------------------------------------------------------------- head


def test_map_shapes():
    head, cfg = make_head()
    tokens = Tensor(Rng(70).normal((64, 64)))
    maps = head(tokens_to_grid(tokens, 8, 8))
    assert maps.score.data.shape == (1, 8, 8)
    assert maps.size.data.shape == (2, 8, 8)
    assert maps.offset.data.shape == (2, 8, 8)


def test_zero_features_give_half_scores():
    head, cfg = make_head()
    maps = head(tokens_to_grid(Tensor(np.zeros((64, 64))), 8, 8))
    np.testing.assert_allclose(maps.score.data, np.full((1, 8, 8), 0.5), atol=1e-12)


def test_maps_bounded():
    head, cfg = make_head(seed=1)
    maps = head(tokens_to_grid(Tensor(Rng(71).normal((64, 64)) * 3), 8, 8))
    for m in (maps.score, maps.size, maps.offset):
        assert np.all(m.data > 0.0) and np.all(m.data < 1.0)


def test_head_gradients():
    head, cfg = make_head(seed=2)
    tokens = Tensor(Rng(72).normal((64, 64)), requires_grad=True)
    rng = Rng(73)
    w_score = rng.normal((1, 8, 8))
    w_size = rng.normal((2, 8, 8))
    w_off = rng.normal((2, 8, 8))

    def f():
        maps = head(tokens_to_grid(tokens, 8, 8))
        out = tsum(mul(maps.score, Tensor(w_score)))
        out = out + tsum(mul(maps.size, Tensor(w_size)))
        return out + tsum(mul(maps.offset, Tensor(w_off)))

    params = [tokens] + [p for _, p in head.named_parameters()]
    assert grad_check(f, params, samples_per_param=3, rng=Rng(74)) < 1e-4


# ----------------------------------------------------------------- decode


def test_decode_known_spike():
    score = np.zeros((1, 8, 8))
    score[0, 2, 3] = 1.0
    size = np.full((2, 8, 8), 0.25)
    offset = np.full((2, 8, 8), 0.5)
    box, peak = decode_box(make_maps(score, size, offset), patch=8, extent=64)
    assert peak == 1.0
    np.testing.assert_allclose(box.center, (28.0, 20.0))
    np.testing.assert_allclose((box.x_min, box.y_min, box.x_max, box.y_max), (20, 12, 36, 28))


def test_decode_uniform_ties_to_first_cell():
    score = np.full((1, 8, 8), 0.37)
    size = np.full((2, 8, 8), 0.5)
    offset = np.full((2, 8, 8), 0.0)
    box, _ = decode_box(make_maps(score, size, offset), patch=8, extent=64)
    assert box.center == (0.0, 0.0)


def test_decode_monotone_invariance():
    rng = Rng(75)
    score = rng.uniform((1, 8, 8), 0.05, 0.95)
    size = rng.uniform((2, 8, 8), 0.1, 0.6)
    offset = rng.uniform((2, 8, 8), 0.0, 1.0)
    a, _ = decode_box(make_maps(score, size, offset), 8, 64)
    b, _ = decode_box(make_maps(score ** 3, size, offset), 8, 64)  # strictly monotone
    assert a.as_xyxy() == b.as_xyxy()


def test_target_roundtrip_within_offset_quantum():
    gt = BoundingBox(22.0, 30.0, 14.0, 11.0)
    tgt = make_frame_target(gt, patch=8, grid_h=8, grid_w=8, extent=64)
    score = tgt.heatmap[None]
    size = np.zeros((2, 8, 8))
    offset = np.zeros((2, 8, 8))
    i, j = tgt.cell
    size[:, i, j] = tgt.size_norm
    offset[:, i, j] = tgt.offset
    box, _ = decode_box(make_maps(score, size, offset), 8, 64)
    assert abs(box.center[0] - gt.center[0]) < 4.0  # p/2
    assert abs(box.center[1] - gt.center[1]) < 4.0
    np.testing.assert_allclose((box.width, box.height), (gt.width, gt.height), atol=1e-9)


def test_cosine_window_shape_and_range():
    w = cosine_window(8, 8)
    assert w.shape == (8, 8)
    assert w.max() <= 1.0 and w.min() >= 0.0


# ------------------------------------------------------------------- giou


def test_giou_identical():
    a = BoundingBox(0, 0, 1, 1)
    assert abs(giou(a, a) - 1.0) < 1e-12


def test_giou_diagonal_neighbors():
    a = BoundingBox(0, 0, 1, 1)
    b = BoundingBox(1, 1, 1, 1)
    assert abs(giou(a, b) - (-0.5)) < 1e-12


def test_giou_far_apart():
    a = BoundingBox(0, 0, 1, 1)
    b = BoundingBox(9, 9, 1, 1)
    assert abs(giou(a, b) - (-0.98)) < 1e-12


def test_giou_symmetric_and_bounded():
    rng = Rng(76)
    for _ in range(200):
        a = BoundingBox(*rng.uniform((2,), 0, 50), *rng.uniform((2,), 1, 30))
        b = BoundingBox(*rng.uniform((2,), 0, 50), *rng.uniform((2,), 1, 30))
        g1, g2 = giou(a, b), giou(b, a)
        assert abs(g1 - g2) < 1e-12
        assert -1.0 - 1e-12 <= g1 <= 1.0 + 1e-12


def test_giou_degenerate_boxes():
    z = BoundingBox(5, 5, 0, 0)
    a = BoundingBox(0, 0, 2, 2)
    assert giou(z, z) == 0.0
    assert np.isfinite(giou(a, z))


# ------------------------------------------------------------ focal loss


def test_focal_perfect_prediction_near_zero():
    heat = np.zeros((8, 8))
    heat[4, 4] = 1.0
    score = np.full((1, 8, 8), 1e-6)
    score[0, 4, 4] = 1.0 - 1e-6
    loss = focal_loss(Tensor(score), heat)
    assert loss.data < 1e-3


def test_focal_uniform_positive():
    heat = np.zeros((8, 8))
    heat[4, 4] = 1.0
    loss = focal_loss(Tensor(np.full((1, 8, 8), 0.5)), heat)
    assert loss.data > 0.1


def test_focal_decreases_as_spike_sharpens():
    heat = np.zeros((8, 8))
    heat[2, 2] = 1.0
    prev = np.inf
    for p in (0.5, 0.7, 0.9, 0.99):
        score = np.full((1, 8, 8), 0.01)
        score[0, 2, 2] = p
        val = float(focal_loss(Tensor(score), heat).data)
        assert val < prev
        prev = val


def test_gaussian_radius_positive():
    for h, w in ((6.0, 6.0), (2.0, 14.0), (30.0, 3.0)):
        assert gaussian_radius(h, w) > 0


def test_heatmap_has_single_peak_at_center_cell():
    gt = BoundingBox(20, 20, 12, 12)
    tgt = make_frame_target(gt, 8, 8, 8, 64)
    assert tgt.heatmap.max() == 1.0
    i, j = np.unravel_index(np.argmax(tgt.heatmap), tgt.heatmap.shape)
    assert (i, j) == tgt.cell


# ------------------------------------------------------------- total loss


def _perfect_maps_for(tgt):
    score = np.clip(tgt.heatmap[None], 1e-6, 1 - 1e-6)
    score[0, tgt.cell[0], tgt.cell[1]] = 1 - 1e-6
    size = np.full((2, 8, 8), 1e-9)
    offset = np.full((2, 8, 8), 1e-9)
    size[:, tgt.cell[0], tgt.cell[1]] = tgt.size_norm
    offset[:, tgt.cell[0], tgt.cell[1]] = tgt.offset
    return make_maps(score, size, offset)


def test_loss_weights_combination():
    gt = BoundingBox(18.0, 26.0, 16.0, 12.0)
    tgt = make_frame_target(gt, 8, 8, 8, 64)
    rng = Rng(77)
    score = rng.uniform((1, 8, 8), 0.05, 0.95)
    size = rng.uniform((2, 8, 8), 0.05, 0.95)
    offset = rng.uniform((2, 8, 8), 0.05, 0.95)
    maps = make_maps(score, size, offset)
    total, parts = clip_loss([maps], [tgt], patch=8, extent=64)
    want = parts["cls"] + L1_WEIGHT * parts["l1"] + GIOU_WEIGHT * parts["giou_loss"]
    assert abs(parts["total"] - want) < 1e-12
    assert abs(float(total.data) - parts["total"]) < 1e-12


def test_loss_averages_over_frames():
    gt = BoundingBox(18.0, 26.0, 16.0, 12.0)
    tgt = make_frame_target(gt, 8, 8, 8, 64)
    rng = Rng(78)
    maps = make_maps(rng.uniform((1, 8, 8), 0.05, 0.95),
                     rng.uniform((2, 8, 8), 0.05, 0.95),
                     rng.uniform((2, 8, 8), 0.05, 0.95))
    one, parts_one = clip_loss([maps], [tgt], 8, 64)
    two, parts_two = clip_loss([maps, maps], [tgt, tgt], 8, 64)
    assert abs(parts_one["total"] - parts_two["total"]) < 1e-12


def test_perfect_prediction_loss_tiny():
    gt = BoundingBox(20.0, 28.0, 12.0, 10.0)
    tgt = make_frame_target(gt, 8, 8, 8, 64)
    maps = _perfect_maps_for(tgt)
    total, parts = clip_loss([maps], [tgt], 8, 64)
    assert parts["l1"] < 1e-6
    assert parts["giou_loss"] < 1e-6
    assert parts["cls"] < 1e-2


def test_loss_gradients_flow():
    gt = BoundingBox(18.0, 26.0, 16.0, 12.0)
    tgt = make_frame_target(gt, 8, 8, 8, 64)
    rng = Rng(79)
    score = Tensor(rng.uniform((1, 8, 8), 0.1, 0.9), requires_grad=True)
    size = Tensor(rng.uniform((2, 8, 8), 0.1, 0.9), requires_grad=True)
    offset = Tensor(rng.uniform((2, 8, 8), 0.1, 0.9), requires_grad=True)

    def f():
        maps = HeadMaps(score=score, size=size, offset=offset)
        total, _ = clip_loss([maps], [tgt], 8, 64)
        return total

    assert grad_check(f, [score, size, offset], samples_per_param=10, rng=Rng(80)) < 1e-4


def test_count_mismatch_rejected():
    gt = BoundingBox(18.0, 26.0, 16.0, 12.0)
    tgt = make_frame_target(gt, 8, 8, 8, 64)
    maps = _perfect_maps_for(tgt)
    with pytest.raises(ValueError):
        clip_loss([maps, maps], [tgt], 8, 64)
