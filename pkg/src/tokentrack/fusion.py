"""Gated perceiver that fuses the two modality streams for the box head.

Queries come from the concatenated search features of both streams folded
to width D; keys and values are the two propagated temporal tokens (one
per stream). Each layer is cross-attention followed by a gated residual
and an MLP residual; every layer re-reads the same temporal tokens. With
freshly initialized gates the gated residual is exactly the identity, so
f_hat equals the raw cross-attention output at init.
"""

import numpy as np

from .autodiff import add, concat
from .encoder import GateUnit, attend
from .nn import Linear, Mlp, Module


class PerceiverLayer(Module):
    def __init__(self, rng, dim, heads, mlp_ratio, dtype=np.float64):
        self.heads = heads
        self.wq = Linear(rng.child("wq"), dim, dim, dtype=dtype)
        # key bias cancels in the softmax, same as in the encoder layers
        self.wk = Linear(rng.child("wk"), dim, dim, frozen_bias=True, dtype=dtype)
        self.wv = Linear(rng.child("wv"), dim, dim, dtype=dtype)
        self.wo = Linear(rng.child("wo"), dim, dim, dtype=dtype)
        self.gate = GateUnit(rng.child("gate"), dim, dtype=dtype)
        self.mlp = Mlp(rng.child("mlp"), dim, dim * mlp_ratio, dtype=dtype)

    def __call__(self, x, tokens, return_probs=False):
        out, probs = attend(self.wq(x), self.wk(tokens), self.wv(tokens), self.heads)
        f_p = self.wo(out)
        f_hat = add(f_p, self.gate(f_p))
        f_out = add(f_hat, self.mlp(f_hat))
        if return_probs:
            return f_out, f_p, f_hat, probs
        return f_out


class GatedModalPerceiver(Module):
    """Stack of perceiver layers over the pair of temporal tokens."""

    def __init__(self, rng, cfg, dtype=np.float64):
        self.sigma = Linear(rng.child("sigma"), 2 * cfg.dim, cfg.dim, dtype=dtype)
        self.layers = [
            PerceiverLayer(rng.child("layer", i), cfg.dim, cfg.gmp_heads, cfg.mlp_ratio, dtype=dtype)
            for i in range(cfg.gmp_layers)
        ]

    def __call__(self, f_rgb, f_aux, token_rgb, token_aux):
        """Fuse (N_s, D) stream features using both (n_tok, D) tokens."""
        x = self.sigma(concat([f_rgb, f_aux], axis=1))
        tokens = concat([token_rgb, token_aux], axis=0)
        for layer in self.layers:
            x = layer(x, tokens)
        return x


def head_input(mode, search_rgb, fused=None):
    """Select what the box head consumes for the given mode."""
    if mode == "rgb_only":
        return search_rgb
    if mode == "dual":
        if fused is None:
            raise ValueError("dual mode needs the fused perceiver output")
        return fused
    raise ValueError(f"unknown mode {mode!r}, expected rgb_only or dual")
