"""Closed-form multiply counts for the two attention layouts.

Only matrix-product multiplies are counted (projections, score products,
weighted sums, MLP), identically for both layouts, so the comparison is
layout-fair. Softmax, norms and elementwise work are excluded.
"""

from dataclasses import dataclass


@dataclass
class AttentionCost:
    projections: int   # q, k, v and output projections
    scores: int        # query-key products plus probability-value products
    mlp: int

    @property
    def total(self):
        return self.projections + self.scores + self.mlp


def sequence_length(n_ref, k, n_search, n_tok):
    return k * n_ref + n_search + n_tok


def concat_cost(dim, n_ref, k, n_search, n_tok, mlp_ratio=4):
    """Per-layer multiplies for full joint self-attention."""
    length = sequence_length(n_ref, k, n_search, n_tok)
    proj = 4 * length * dim * dim
    scores = 2 * length * length * dim
    mlp = 2 * mlp_ratio * length * dim * dim
    return AttentionCost(proj, scores, mlp)


def separate_cost(dim, n_ref, k, n_search, n_tok, mlp_ratio=4):
    """Per-layer multiplies for the three restricted patterns.

    Projections and MLP touch every row exactly once either way; only the
    attention score work shrinks: refs^2 + search*(refs+search) + tok*L
    query-key pairs instead of L^2.
    """
    length = sequence_length(n_ref, k, n_search, n_tok)
    refs = k * n_ref
    proj = 4 * length * dim * dim
    pairs = refs * refs + n_search * (refs + n_search) + n_tok * length
    scores = 2 * pairs * dim
    mlp = 2 * mlp_ratio * length * dim * dim
    return AttentionCost(proj, scores, mlp)


def compare(dim=64, n_ref=16, k=3, n_search=64, n_tok=1, mlp_ratio=4, layers=1):
    """Both layouts' counts and whether separation is strictly cheaper."""
    cc = concat_cost(dim, n_ref, k, n_search, n_tok, mlp_ratio)
    sc = separate_cost(dim, n_ref, k, n_search, n_tok, mlp_ratio)
    return {
        "concat": cc.total * layers,
        "separate": sc.total * layers,
        "concat_scores": cc.scores * layers,
        "separate_scores": sc.scores * layers,
        "separate_cheaper": sc.total < cc.total,
    }
