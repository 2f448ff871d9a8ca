"""Joint-sequence transformer encoder with temporal-token attention.

The input sequence per stream is [ref_1 .. ref_k, search, temporal token].
Two attention layouts are supported:

* concat: one full self-attention over the whole joint sequence.
* separate: q/k/v are projected once from the layer input, then three
  restricted patterns run in parallel on slices of them: references attend
  references, search attends references+search, the temporal token attends
  everything. Because the patterns partition the query rows, the separated
  layer's reference-segment output equals a plain self-attention layer run
  on the references alone.

Both layouts share identical parameters, so a checkpoint can be evaluated
under either. In dual-stream mode the two modality streams pass through the
same layer weights and exchange information only through the conditional
gates applied after every layer.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import add, concat, gelu, matmul, mul, narrow, reshape, softmax_lastdim, tanh, transpose
from .nn import LayerNorm, Linear, Mlp, Module, ones_param


@dataclass(frozen=True)
class SegmentBounds:
    """Row extents of the joint sequence: k reference frames, search, token."""

    n_ref: int      # rows per reference frame
    k: int          # number of reference frames
    n_search: int
    n_tok: int

    @property
    def refs(self):
        return self.n_ref * self.k

    @property
    def total(self):
        return self.refs + self.n_search + self.n_tok


def split_heads(x, heads):
    """(L, D) -> (heads, L, D/heads)."""
    length, dim = x.shape
    return transpose(reshape(x, (length, heads, dim // heads)), (1, 0, 2))


def merge_heads(x):
    """(heads, L, dh) -> (L, heads*dh)."""
    h, length, dh = x.shape
    return reshape(transpose(x, (1, 0, 2)), (length, h * dh))


def attend(q, k, v, heads):
    """Scaled dot-product attention; returns (out (Lq, D), probs (h, Lq, Lk))."""
    dh = q.shape[-1] // heads
    qh = split_heads(q, heads)
    kh = split_heads(k, heads)
    vh = split_heads(v, heads)
    scores = mul(matmul(qh, transpose(kh, (0, 2, 1))), 1.0 / np.sqrt(dh))
    probs = softmax_lastdim(scores)
    return merge_heads(matmul(probs, vh)), probs


class EncoderLayer(Module):
    """Pre-norm block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, rng, dim, heads, mlp_ratio, dtype=np.float64):
        self.heads = heads
        self.ln1 = LayerNorm(dim, dtype=dtype)
        self.wq = Linear(rng.child("wq"), dim, dim, dtype=dtype)
        # a key bias shifts every attention score by the same amount, which
        # softmax cancels exactly, so it stays frozen at zero
        self.wk = Linear(rng.child("wk"), dim, dim, frozen_bias=True, dtype=dtype)
        self.wv = Linear(rng.child("wv"), dim, dim, dtype=dtype)
        self.wo = Linear(rng.child("wo"), dim, dim, dtype=dtype)
        self.ln2 = LayerNorm(dim, dtype=dtype)
        self.mlp = Mlp(rng.child("mlp"), dim, dim * mlp_ratio, dtype=dtype)

    def _attention(self, x, bounds, variant):
        y = self.ln1(x)
        q, k, v = self.wq(y), self.wk(y), self.wv(y)
        if variant == "concat":
            out, _ = attend(q, k, v, self.heads)
            return self.wo(out)
        if variant != "separate":
            raise ValueError(f"unknown attention variant {variant!r}")
        if bounds is None:
            raise ValueError("separated attention needs segment bounds")
        r, s, t = bounds.refs, bounds.n_search, bounds.n_tok
        # references attend only themselves
        out_r, _ = attend(narrow(q, 0, 0, r), narrow(k, 0, 0, r), narrow(v, 0, 0, r), self.heads)
        # search attends references plus itself
        out_s, _ = attend(narrow(q, 0, r, s), narrow(k, 0, 0, r + s), narrow(v, 0, 0, r + s), self.heads)
        # the temporal token attends the whole sequence
        out_t, _ = attend(narrow(q, 0, r + s, t), k, v, self.heads)
        return self.wo(concat([out_r, out_s, out_t], axis=0))

    def __call__(self, x, bounds=None, variant="concat"):
        x = add(x, self._attention(x, bounds, variant))
        return add(x, self.mlp(self.ln2(x)))


class GateUnit(Module):
    """Two-layer perceptron scaled by tanh of a learned gating vector.

    The final linear layer is zero-initialized, so a fresh gate emits
    exactly zero and the module it is attached to starts as an identity
    on its residual path. The gating vector starts at one, keeping its
    tanh factor away from zero so gradients reach both halves.
    """

    def __init__(self, rng, dim, hidden=None, dtype=np.float64):
        self.fc1 = Linear(rng.child("fc1"), dim, hidden or dim, dtype=dtype)
        self.fc2 = Linear(rng.child("fc2"), hidden or dim, dim, zero_init=True, dtype=dtype)
        self.gate_vec = ones_param((dim,), dtype)

    def __call__(self, x):
        return mul(tanh(self.gate_vec), self.fc2(gelu(self.fc1(x))))


class ConditionalGate(Module):
    """Cross-modal interaction: one shared update added to both streams.

    u = gate(sigma([f, f_aux])); both f + u and f_aux + u are returned.
    sigma folds the concatenated streams back to width D.
    """

    def __init__(self, rng, dim, dtype=np.float64):
        self.sigma = Linear(rng.child("sigma"), 2 * dim, dim, dtype=dtype)
        self.gate = GateUnit(rng.child("gate"), dim, dtype=dtype)

    def __call__(self, f, f_aux):
        u = self.gate(self.sigma(concat([f, f_aux], axis=1)))
        return add(f, u), add(f_aux, u)


class TokenEncoder(Module):
    """Stack of encoder layers with per-layer conditional gates.

    rgb-only mode never touches the gates; dual mode runs both streams
    through the shared layers and applies the gate after every layer.
    """

    def __init__(self, rng, cfg, dtype=np.float64):
        self.layers = [
            EncoderLayer(rng.child("layer", i), cfg.dim, cfg.heads, cfg.mlp_ratio, dtype=dtype)
            for i in range(cfg.layers)
        ]
        self.gates = [ConditionalGate(rng.child("gate", i), cfg.dim, dtype=dtype) for i in range(cfg.layers)]

    def forward_single(self, x, bounds, variant):
        for layer in self.layers:
            x = layer(x, bounds, variant)
        return x

    def forward_dual(self, x, x_aux, bounds, variant):
        for layer, gate in zip(self.layers, self.gates):
            x = layer(x, bounds, variant)
            x_aux = layer(x_aux, bounds, variant)
            x, x_aux = gate(x, x_aux)
        return x, x_aux


def split_output(x, bounds):
    """Slice the encoder output back into (refs, search, token) segments."""
    refs = narrow(x, 0, 0, bounds.refs)
    search = narrow(x, 0, bounds.refs, bounds.n_search)
    token = narrow(x, 0, bounds.refs + bounds.n_search, bounds.n_tok)
    return refs, search, token
