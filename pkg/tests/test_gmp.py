"""Gated modal perceiver: shapes, init identity, attention structure."""
import numpy as np
import pytest

from tokentrack.autodiff import Tensor, tsum, mul, grad_check
from tokentrack.config import ModelConfig
from tokentrack.fusion import GatedModalPerceiver, PerceiverLayer, head_input
from tokentrack.rng import Rng


def make_gmp(dim=32, heads=2, layers=3, seed=0):
    cfg = ModelConfig(dim=dim, heads=heads, gmp_heads=heads, gmp_layers=layers,
                      ref_size=16, search_size=24, patch=8)
    return GatedModalPerceiver(Rng(seed, ("gmp",)), cfg)


def streams(rng, n=9, dim=32, n_tok=1):
    f = Tensor(rng.child("f").normal((n, dim)))
    g = Tensor(rng.child("g").normal((n, dim)))
    t = Tensor(rng.child("t").normal((n_tok, dim)))
    u = Tensor(rng.child("u").normal((n_tok, dim)))
    return f, g, t, u


def test_output_shape():
    gmp = make_gmp()
    f, g, t, u = streams(Rng(50))
    out = gmp(f, g, t, u)
    assert out.data.shape == (9, 32)


def test_gate_identity_at_init():
    """f_hat = f_p exactly while the gate's final layer is zero."""
    layer = PerceiverLayer(Rng(51, ("pl",)), dim=32, heads=2, mlp_ratio=4)
    f, g, t, u = streams(Rng(52))
    tokens = Tensor(np.concatenate([t.data, u.data], axis=0))
    out, f_p, f_hat, probs = layer(f, tokens, return_probs=True)
    np.testing.assert_array_equal(f_hat.data, f_p.data)


def test_gate_contributes_after_waking_up():
    layer = PerceiverLayer(Rng(53, ("pl",)), dim=32, heads=2, mlp_ratio=4)
    f, g, t, u = streams(Rng(54))
    tokens = Tensor(np.concatenate([t.data, u.data], axis=0))
    base = layer(f, tokens).data
    layer.gate.fc2.weight.data[:] = 0.2  # wake the gate up
    moved = layer(f, tokens).data
    assert not np.allclose(base, moved)


def test_attention_weights_sum_to_one():
    layer = PerceiverLayer(Rng(55, ("pl",)), dim=32, heads=2, mlp_ratio=4)
    f, g, t, u = streams(Rng(56), n_tok=2)
    tokens = Tensor(np.concatenate([t.data, u.data], axis=0))  # 4 keys
    out, f_p, f_hat, probs = layer(f, tokens, return_probs=True)
    sums = probs.data.sum(axis=-1)
    np.testing.assert_allclose(sums, np.ones_like(sums), atol=1e-12)


def test_identical_tokens_collapse_to_single_key():
    """Duplicated keys halve the weights but leave the mixture unchanged."""
    layer = PerceiverLayer(Rng(57, ("pl",)), dim=32, heads=2, mlp_ratio=4)
    f = Tensor(Rng(58).normal((7, 32)))
    tok = Rng(59).normal((1, 32))
    doubled = Tensor(np.concatenate([tok, tok], axis=0))
    single = Tensor(tok)
    a = layer(f, doubled).data
    b = layer(f, single).data
    assert np.max(np.abs(a - b)) < 1e-10


def test_gmp_uses_both_token_streams():
    gmp = make_gmp(seed=1)
    f, g, t, u = streams(Rng(60))
    base = gmp(f, g, t, u).data
    bumped = Tensor(u.data + 0.5)
    moved = gmp(f, g, t, bumped).data
    assert not np.allclose(base, moved)


def test_gmp_depth_matters():
    shallow = make_gmp(layers=1, seed=2)
    deep = make_gmp(layers=3, seed=2)
    assert len(shallow.layers) == 1
    assert len(deep.layers) == 3


def test_gmp_gradients():
    gmp = make_gmp(dim=16, heads=2, layers=2, seed=3)
    rng = Rng(61)
    f = Tensor(rng.child("f").normal((5, 16)), requires_grad=True)
    g = Tensor(rng.child("g").normal((5, 16)), requires_grad=True)
    t = Tensor(rng.child("t").normal((1, 16)), requires_grad=True)
    u = Tensor(rng.child("u").normal((1, 16)), requires_grad=True)
    weights = rng.child("w").normal((5, 16))

    def f_loss():
        return tsum(mul(gmp(f, g, t, u), Tensor(weights)))

    params = [f, g, t, u] + [p for _, p in gmp.named_parameters()]
    assert grad_check(f_loss, params, samples_per_param=4, rng=Rng(62)) < 1e-4


def test_head_input_routing():
    search = Tensor(np.ones((4, 8)))
    fused = Tensor(np.full((4, 8), 2.0))
    np.testing.assert_array_equal(head_input("rgb_only", search).data, search.data)
    np.testing.assert_array_equal(head_input("dual", search, fused).data, fused.data)
    with pytest.raises(ValueError):
        head_input("dual", search, None)
