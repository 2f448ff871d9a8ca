"""Frame tokenization: patch embedding plus positional, role and frame-index terms.

Two patch tokenizers exist: one for RGB, one shared by every auxiliary
modality (depth, thermal, event all pass through the same projection).
The propagated temporal token starts as pure zero content; its role
embedding is added at input-assembly time on every forward pass, never
baked into the propagated state.
"""

import numpy as np

from .autodiff import Tensor, add, conv2d, narrow, reshape, transpose
from .nn import Module, normal_param, uniform_param, zeros_param

MAX_REF_FRAMES = 8

ROLES = ("reference", "search", "token")


def make_temporal_token(n_tok, dim, dtype=np.float64):
    """Fresh temporal token: all-zero content."""
    return np.zeros((n_tok, dim), dtype=dtype)


class Tokenizer(Module):
    """Patch-embeds crops and attaches the learned additive embeddings."""

    def __init__(self, rng, cfg, dtype=np.float64):
        self.patch = cfg.patch
        self.dim = cfg.dim
        self.dtype = dtype
        in_ch = 3
        fan_in = in_ch * cfg.patch * cfg.patch
        bound = 1.0 / np.sqrt(fan_in)
        self.rgb_kernel = uniform_param(rng.child("rgb_kernel"), (cfg.dim, in_ch, cfg.patch, cfg.patch), bound, dtype)
        self.rgb_bias = zeros_param((cfg.dim,), dtype)
        self.aux_kernel = uniform_param(rng.child("aux_kernel"), (cfg.dim, in_ch, cfg.patch, cfg.patch), bound, dtype)
        self.aux_bias = zeros_param((cfg.dim,), dtype)
        # one positional table per crop resolution, shared by both streams
        self.pos_ref = normal_param(rng.child("pos_ref"), (cfg.ref_tokens, cfg.dim), 0.02, dtype)
        self.pos_search = normal_param(rng.child("pos_search"), (cfg.search_tokens, cfg.dim), 0.02, dtype)
        self.role_reference = normal_param(rng.child("role_reference"), (1, cfg.dim), 0.02, dtype)
        self.role_search = normal_param(rng.child("role_search"), (1, cfg.dim), 0.02, dtype)
        self.role_token = normal_param(rng.child("role_token"), (1, cfg.dim), 0.02, dtype)
        self.frame_index = normal_param(rng.child("frame_index"), (MAX_REF_FRAMES, cfg.dim), 0.02, dtype)
        self.use_frame_index = cfg.frame_embed

    def patch_tokens(self, crop, modality):
        """Project one (3, H, W) crop to (H*W/p^2, D) tokens, no embeddings."""
        arr = np.asarray(crop, dtype=self.dtype)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ValueError(f"expected a (3, H, W) crop, got {arr.shape}")
        if modality == "rgb":
            kernel, bias = self.rgb_kernel, self.rgb_bias
        elif modality in ("aux", "depth", "thermal", "event"):
            kernel, bias = self.aux_kernel, self.aux_bias
        else:
            raise ValueError(f"unknown modality {modality!r}")
        grid = conv2d(Tensor(arr), kernel, self.patch)        # (D, h, w)
        d = grid.shape[0]
        tokens = transpose(reshape(grid, (d, grid.shape[1] * grid.shape[2])), (1, 0))
        return add(tokens, bias)

    def embed_frame(self, crop, role, modality, frame_idx=None):
        """Tokens plus positional, role and (for references) frame-index terms."""
        if role not in ("reference", "search"):
            raise ValueError(f"role must be reference or search, got {role!r}")
        tokens = self.patch_tokens(crop, modality)
        n = tokens.shape[0]
        if role == "reference":
            pos, role_emb = self.pos_ref, self.role_reference
        else:
            pos, role_emb = self.pos_search, self.role_search
        if n != pos.shape[0]:
            raise ValueError(f"{role} crop yields {n} tokens but the positional table holds {pos.shape[0]}")
        out = add(add(tokens, pos), role_emb)
        if role == "reference" and self.use_frame_index:
            if frame_idx is None:
                raise ValueError("reference frames need a frame_idx when frame-index embeddings are on")
            if frame_idx >= MAX_REF_FRAMES:
                raise ValueError(f"frame_idx {frame_idx} exceeds the frame-index table ({MAX_REF_FRAMES})")
            out = add(out, narrow(self.frame_index, 0, frame_idx, 1))
        return out

    def token_input(self, state):
        """Propagated token content plus its role embedding, for this pass only."""
        if not isinstance(state, Tensor):
            state = Tensor(np.asarray(state, dtype=self.dtype))
        return add(state, self.role_token)
