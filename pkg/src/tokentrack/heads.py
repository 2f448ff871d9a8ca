"""Center-point box head: score, size and offset maps over the search grid."""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, conv2d_same, relu, reshape, sigmoid, transpose
from .boxes import BoundingBox
from .nn import Module, uniform_param, zeros_param


@dataclass
class HeadMaps:
    """Sigmoid-activated prediction maps, each (C, H/p, W/p)."""

    score: Tensor     # (1, gh, gw) target-center confidence
    size: Tensor      # (2, gh, gw) box (w, h) as a fraction of the crop extent
    offset: Tensor    # (2, gh, gw) sub-cell (dx, dy) of the center


class ConvStack(Module):
    """Three 3x3 same-padding convolutions tapering D -> D/2 -> D/4 -> out."""

    def __init__(self, rng, dim, out_channels, dtype=np.float64):
        mid1, mid2 = dim // 2, dim // 4
        self.k1 = self._kernel(rng.child("k1"), mid1, dim, dtype)
        self.b1 = zeros_param((mid1,), dtype)
        self.k2 = self._kernel(rng.child("k2"), mid2, mid1, dtype)
        self.b2 = zeros_param((mid2,), dtype)
        self.k3 = self._kernel(rng.child("k3"), out_channels, mid2, dtype)
        self.b3 = zeros_param((out_channels,), dtype)

    @staticmethod
    def _kernel(rng, c_out, c_in, dtype):
        bound = 1.0 / np.sqrt(c_in * 9)
        return uniform_param(rng, (c_out, c_in, 3, 3), bound, dtype)

    def __call__(self, x):
        x = relu(conv2d_same(x, self.k1, self.b1))
        x = relu(conv2d_same(x, self.k2, self.b2))
        return conv2d_same(x, self.k3, self.b3)


class CenterHead(Module):
    """Three independent conv stacks over the (D, gh, gw) search feature grid.

    All biases start at zero, so an all-zero feature grid maps to score 0.5
    everywhere after the sigmoid.
    """

    def __init__(self, rng, cfg, dtype=np.float64):
        self.score_stack = ConvStack(rng.child("score"), cfg.dim, 1, dtype=dtype)
        self.size_stack = ConvStack(rng.child("size"), cfg.dim, 2, dtype=dtype)
        self.offset_stack = ConvStack(rng.child("offset"), cfg.dim, 2, dtype=dtype)

    def __call__(self, grid):
        return HeadMaps(
            score=sigmoid(self.score_stack(grid)),
            size=sigmoid(self.size_stack(grid)),
            offset=sigmoid(self.offset_stack(grid)),
        )


def tokens_to_grid(tokens, grid_h, grid_w):
    """(N, D) row-major tokens back to a (D, gh, gw) feature image."""
    n, d = tokens.shape
    if n != grid_h * grid_w:
        raise ValueError(f"{n} tokens cannot tile a {grid_h}x{grid_w} grid")
    return reshape(transpose(tokens, (1, 0)), (d, grid_h, grid_w))


def decode_box(maps, patch, extent):
    """Peak cell plus offsets and sizes -> box in crop pixels, with its score.

    Ties in the score map resolve to the lowest flat index, matching argmax
    over the row-major layout.
    """
    score = maps.score.data[0]
    flat = int(np.argmax(score))
    gh, gw = score.shape
    i, j = divmod(flat, gw)
    dx = float(maps.offset.data[0, i, j])
    dy = float(maps.offset.data[1, i, j])
    w = float(maps.size.data[0, i, j]) * extent
    h = float(maps.size.data[1, i, j]) * extent
    cx = (j + dx) * patch
    cy = (i + dy) * patch
    box = BoundingBox(cx - 0.5 * w, cy - 0.5 * h, w, h)
    return box, float(score[i, j])


def apply_window(score_map, window):
    """Multiply a score map (1, gh, gw) array by a precomputed window."""
    return score_map * window


def cosine_window(gh, gw):
    """Outer product of hanning windows, peak 1 at the center."""
    wy = np.hanning(gh + 2)[1:-1]
    wx = np.hanning(gw + 2)[1:-1]
    win = np.outer(wy, wx)
    return win / win.max()
