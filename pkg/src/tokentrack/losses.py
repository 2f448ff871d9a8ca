"""Training targets and losses for the center-point head.

One frame contributes a penalty-reduced focal term over the score map plus
an L1 and a generalized-IoU term, both evaluated only at the ground-truth
center cell (the single positive). Box regression works on coordinates
normalized by the crop extent. Clip totals average each term over the
clip's search frames before weighting:

    total = cls + 5 * l1 + 2 * (1 - giou)
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, absolute, add, clamp, div, log, maximum, minimum, mul, narrow, power, relu, reshape, sub, tsum

L1_WEIGHT = 5.0
GIOU_WEIGHT = 2.0
FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
_PROB_EPS = 1e-6


@dataclass
class FrameTarget:
    """Ground truth for one search frame, all in crop coordinates."""

    heatmap: np.ndarray      # (gh, gw), exactly one cell equals 1
    cell: tuple              # (row, col) of that cell
    box_norm: np.ndarray     # (4,) xyxy normalized by the crop extent
    size_norm: np.ndarray    # (2,) (w, h) / extent
    offset: np.ndarray       # (2,) sub-cell (dx, dy) of the center


def gaussian_radius(height, width, min_overlap=0.7):
    """Largest radius keeping IoU >= min_overlap for a (height, width) box."""
    a1 = 1.0
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 - np.sqrt(b1 * b1 - 4 * a1 * c1)) / (2 * a1)

    a2 = 4.0
    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 - np.sqrt(b2 * b2 - 4 * a2 * c2)) / (2 * a2)

    a3 = 4.0 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + np.sqrt(b3 * b3 - 4 * a3 * c3)) / (2 * a3)
    return max(0.0, min(r1, r2, r3))


def make_frame_target(gt_box, patch, grid_h, grid_w, extent):
    """Build heatmap and regression targets from a crop-coordinate gt box."""
    cx, cy = gt_box.center
    col = int(np.clip(np.floor(cx / patch), 0, grid_w - 1))
    row = int(np.clip(np.floor(cy / patch), 0, grid_h - 1))
    heat = np.zeros((grid_h, grid_w))
    radius = int(gaussian_radius(gt_box.height / patch, gt_box.width / patch))
    if radius > 0:
        sigma = (2 * radius + 1) / 6.0
        for di in range(-radius, radius + 1):
            for dj in range(-radius, radius + 1):
                i, j = row + di, col + dj
                if 0 <= i < grid_h and 0 <= j < grid_w:
                    heat[i, j] = max(heat[i, j], np.exp(-(di * di + dj * dj) / (2 * sigma * sigma)))
    heat[row, col] = 1.0
    box_norm = np.array([gt_box.x_min, gt_box.y_min, gt_box.x_max, gt_box.y_max]) / extent
    size_norm = np.array([gt_box.width, gt_box.height]) / extent
    offset = np.array([cx / patch - col, cy / patch - row])
    return FrameTarget(heatmap=heat, cell=(row, col), box_norm=box_norm, size_norm=size_norm, offset=offset)


def focal_loss(score, heatmap, alpha=FOCAL_ALPHA, beta=FOCAL_BETA):
    """Penalty-reduced focal loss over a sigmoid score map.

    score is a (1, gh, gw) Tensor; heatmap is the constant target with one
    positive cell. Normalized by the positive count (one per frame).
    """
    gh, gw = heatmap.shape
    p = clamp(reshape(score, (gh, gw)), _PROB_EPS, 1.0 - _PROB_EPS)
    pos_mask = (heatmap >= 1.0).astype(float)
    neg_weight = np.power(1.0 - heatmap, beta) * (1.0 - pos_mask)
    pos_term = mul(Tensor(pos_mask), mul(power(sub(1.0, p), alpha), log(p)))
    neg_term = mul(Tensor(neg_weight), mul(power(p, alpha), log(sub(1.0, p))))
    n_pos = max(1.0, float(pos_mask.sum()))
    return mul(add(tsum(pos_term), tsum(neg_term)), -1.0 / n_pos)


def _at(maps, channel, row, col):
    """One scalar from a (C, gh, gw) Tensor as a 0-d graph node."""
    cell = narrow(narrow(narrow(maps, 0, channel, 1), 1, row, 1), 2, col, 1)
    return reshape(cell, ())


def predicted_box_norm(maps, cell, patch, extent):
    """Differentiable xyxy box (normalized) read at the target cell."""
    row, col = cell
    dx = _at(maps.offset, 0, row, col)
    dy = _at(maps.offset, 1, row, col)
    w = _at(maps.size, 0, row, col)
    h = _at(maps.size, 1, row, col)
    scale = patch / extent
    cx = mul(add(dx, float(col)), scale)
    cy = mul(add(dy, float(row)), scale)
    x0 = sub(cx, mul(w, 0.5))
    x1 = add(cx, mul(w, 0.5))
    y0 = sub(cy, mul(h, 0.5))
    y1 = add(cy, mul(h, 0.5))
    return x0, y0, x1, y1


def giou_pair(pred, gt):
    """Generalized IoU between a predicted (x0,y0,x1,y1) tuple of scalars
    and a constant gt array, as a graph node."""
    px0, py0, px1, py1 = pred
    gx0, gy0, gx1, gy1 = (float(v) for v in gt)
    iw = relu(sub(minimum(px1, gx1), maximum(px0, gx0)))
    ih = relu(sub(minimum(py1, gy1), maximum(py0, gy0)))
    inter = mul(iw, ih)
    area_p = mul(sub(px1, px0), sub(py1, py0))
    area_g = (gx1 - gx0) * (gy1 - gy0)
    union = sub(add(area_p, area_g), inter)
    ew = sub(maximum(px1, gx1), minimum(px0, gx0))
    eh = sub(maximum(py1, gy1), minimum(py0, gy0))
    enclosure = mul(ew, eh)
    return sub(div(inter, union), div(sub(enclosure, union), enclosure))


def l1_box(pred, gt):
    """Mean absolute error over the four normalized coordinates."""
    parts = [absolute(sub(p, float(g))) for p, g in zip(pred, gt)]
    total = parts[0]
    for part in parts[1:]:
        total = add(total, part)
    return mul(total, 0.25)


def frame_loss_terms(maps, target, patch, extent):
    """(cls, l1, giou) graph nodes for one search frame."""
    cls = focal_loss(maps.score, target.heatmap)
    pred = predicted_box_norm(maps, target.cell, patch, extent)
    return cls, l1_box(pred, target.box_norm), giou_pair(pred, target.box_norm)


def clip_loss(per_frame_maps, per_frame_targets, patch, extent):
    """Weighted objective averaged over the clip's search frames.

    Returns (total Tensor, floats dict) where the dict carries detached
    per-term values for logging.
    """
    if len(per_frame_maps) != len(per_frame_targets):
        raise ValueError(f"{len(per_frame_maps)} map sets vs {len(per_frame_targets)} targets")
    cls_terms, l1_terms, giou_terms = [], [], []
    for maps, target in zip(per_frame_maps, per_frame_targets):
        if target is None:
            # unsupervised frame (target hidden): it still runs through the
            # network for the sake of the token chain, but contributes no loss
            continue
        cls, l1, gi = frame_loss_terms(maps, target, patch, extent)
        cls_terms.append(cls)
        l1_terms.append(l1)
        giou_terms.append(gi)
    if not cls_terms:
        raise ValueError("clip has no supervised frames")

    def stack_mean(terms):
        acc = terms[0]
        for t in terms[1:]:
            acc = add(acc, t)
        return mul(acc, 1.0 / len(terms))

    cls_mean = stack_mean(cls_terms)
    l1_mean = stack_mean(l1_terms)
    giou_loss_mean = sub(1.0, stack_mean(giou_terms))
    total = add(add(cls_mean, mul(l1_mean, L1_WEIGHT)), mul(giou_loss_mean, GIOU_WEIGHT))
    parts = {
        "cls": float(cls_mean.data),
        "l1": float(l1_mean.data),
        "giou_loss": float(giou_loss_mean.data),
        "total": float(total.data),
    }
    return total, parts
