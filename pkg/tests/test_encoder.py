"""Encoder layers: both attention layouts, oracle equivalence, gating."""
import numpy as np
import pytest

from tokentrack.autodiff import Tape, Tensor, backward, tsum, mul
from tokentrack.config import ModelConfig
from tokentrack.encoder import (
    SegmentBounds, EncoderLayer, TokenEncoder, ConditionalGate, GateUnit,
    attend, split_output,
)
from tokentrack.oracle import dense_attention, reference_layer, reference_encoder
from tokentrack.rng import Rng


def random_joint(rng, bounds, dim):
    return Tensor(rng.normal((bounds.total, dim)) * 0.5)


def make_layer(dim=32, heads=2, seed=0):
    return EncoderLayer(Rng(seed, ("layer",)), dim, heads, mlp_ratio=4)


def test_attend_matches_dense_oracle():
    rng = Rng(30)
    q = rng.normal((6, 16))
    k = rng.normal((10, 16))
    v = rng.normal((10, 16))
    got, probs = attend(Tensor(q), Tensor(k), Tensor(v), heads=4)
    want = dense_attention(q, k, v, heads=4)
    assert np.max(np.abs(got.data - want)) < 1e-12
    np.testing.assert_allclose(probs.data.sum(axis=-1), np.ones_like(probs.data.sum(axis=-1)), atol=1e-12)


def test_concat_layer_matches_reference():
    layer = make_layer()
    bounds = SegmentBounds(n_ref=9, k=2, n_search=12, n_tok=1)
    x = random_joint(Rng(31), bounds, 32)
    got = layer(x, bounds=bounds, variant="concat")
    want = reference_layer(layer, x.data, heads=2, variant="concat")
    assert np.max(np.abs(got.data - want)) < 1e-10


def test_separate_layer_matches_reference():
    layer = make_layer(seed=1)
    bounds = SegmentBounds(n_ref=8, k=3, n_search=10, n_tok=1)
    x = random_joint(Rng(32), bounds, 32)
    got = layer(x, bounds=bounds, variant="separate")
    want = reference_layer(layer, x.data, heads=2, variant="separate", bounds=bounds)
    assert np.max(np.abs(got.data - want)) < 1e-10


def test_separate_refs_segment_equals_self_attention():
    """Sub-pass over references reduces to plain self-attention on them."""
    layer = make_layer(seed=2)
    bounds = SegmentBounds(n_ref=7, k=1, n_search=9, n_tok=1)
    x = random_joint(Rng(33), bounds, 32)
    joint = layer(x, bounds=bounds, variant="separate")

    refs_only = SegmentBounds(n_ref=7, k=1, n_search=0, n_tok=0)
    alone = layer(Tensor(x.data[: bounds.refs]), bounds=refs_only, variant="concat")
    assert np.max(np.abs(joint.data[: bounds.refs] - alone.data)) < 1e-10


def test_variants_share_parameters_but_differ():
    layer = make_layer(seed=3)
    bounds = SegmentBounds(n_ref=6, k=2, n_search=8, n_tok=1)
    x = random_joint(Rng(34), bounds, 32)
    a = layer(x, bounds=bounds, variant="concat")
    b = layer(x, bounds=bounds, variant="separate")
    assert a.data.shape == b.data.shape
    assert not np.allclose(a.data, b.data)  # different attention patterns


def test_zero_value_and_mlp_is_identity():
    layer = make_layer(seed=4)
    layer.wv.weight.data[:] = 0.0
    layer.wv.bias.data[:] = 0.0
    layer.wo.bias.data[:] = 0.0
    layer.mlp.fc2.weight.data[:] = 0.0
    layer.mlp.fc2.bias.data[:] = 0.0
    bounds = SegmentBounds(n_ref=5, k=1, n_search=6, n_tok=1)
    x = random_joint(Rng(35), bounds, 32)
    out = layer(x, bounds=bounds, variant="concat")
    np.testing.assert_allclose(out.data, x.data, atol=1e-12)


def test_encoder_stack_matches_composed_reference():
    cfg = ModelConfig(dim=32, heads=2, layers=4, ref_size=16, search_size=24, patch=8)
    enc = TokenEncoder(Rng(5, ("enc",)), cfg)
    bounds = SegmentBounds(n_ref=4, k=2, n_search=9, n_tok=1)
    x = random_joint(Rng(36), bounds, 32)
    got = enc.forward_single(x, bounds, variant="concat")
    want = reference_encoder(enc, x.data, heads=2, variant="concat")
    assert np.max(np.abs(got.data - want)) < 1e-10


def test_search_segment_invariant_under_reference_permutation():
    """With identical positional treatment, softmax ignores key order."""
    layer = make_layer(seed=6)
    k, n_r = 3, 4
    bounds = SegmentBounds(n_ref=n_r, k=k, n_search=6, n_tok=1)
    x = random_joint(Rng(37), bounds, 32)

    perm = np.concatenate([np.arange(n_r) + 2 * n_r, np.arange(n_r), np.arange(n_r) + n_r])
    x_perm = x.data.copy()
    x_perm[: bounds.refs] = x.data[perm]

    a = layer(x, bounds=bounds, variant="concat")
    b = layer(Tensor(x_perm), bounds=bounds, variant="concat")
    search_a = split_output(a, bounds)[1]
    search_b = split_output(b, bounds)[1]
    assert np.max(np.abs(search_a.data - search_b.data)) < 1e-10


def test_gate_identity_at_init():
    gate = ConditionalGate(Rng(7, ("gate",)), dim=32)
    f = Tensor(Rng(38).normal((10, 32)))
    g = Tensor(Rng(39).normal((10, 32)))
    out_f, out_g = gate(f, g)
    np.testing.assert_array_equal(out_f.data, f.data)
    np.testing.assert_array_equal(out_g.data, g.data)


def test_gate_zero_inputs_zero_outputs_at_init():
    gate = ConditionalGate(Rng(8, ("gate",)), dim=16)
    z = Tensor(np.zeros((4, 16)))
    a, b = gate(z, z)
    assert not a.data.any() and not b.data.any()


def test_gate_live_after_perturbation():
    gate = ConditionalGate(Rng(9, ("gate",)), dim=16)
    gate.gate.fc2.weight.data[:] = 0.05
    f = Tensor(Rng(40).normal((4, 16)))
    g = Tensor(Rng(41).normal((4, 16)))
    a, b = gate(f, g)
    assert not np.allclose(a.data, f.data)
    assert not np.allclose(b.data, g.data)
    # shared update: both streams move by the same amount
    np.testing.assert_allclose(a.data - f.data, b.data - g.data, atol=1e-12)


def test_gate_unit_tanh_scaling():
    unit = GateUnit(Rng(10, ("unit",)), dim=8)
    unit.fc2.weight.data[:] = 0.1
    x = Tensor(Rng(42).normal((3, 8)))
    out = unit(x).data  # scaled by tanh(1) at the default gate vector
    unit.gate_vec.data[:] = 50.0  # tanh saturates to 1
    sat = unit(x).data
    np.testing.assert_allclose(sat, out / np.tanh(1.0), atol=1e-10)


def test_dual_stream_at_init_equals_two_single_passes():
    cfg = ModelConfig(dim=32, heads=2, layers=3, ref_size=16, search_size=24, patch=8)
    enc = TokenEncoder(Rng(11, ("enc",)), cfg)
    bounds = SegmentBounds(n_ref=4, k=1, n_search=9, n_tok=1)
    x = random_joint(Rng(43), bounds, 32)
    y = random_joint(Rng(44), bounds, 32)

    single_x = enc.forward_single(x, bounds, variant="concat")
    single_y = enc.forward_single(y, bounds, variant="concat")
    dual_x, dual_y = enc.forward_dual(x, y, bounds, variant="concat")
    assert np.max(np.abs(dual_x.data - single_x.data)) < 1e-10
    assert np.max(np.abs(dual_y.data - single_y.data)) < 1e-10


def test_gradients_reach_temporal_token():
    layer = make_layer(seed=12)
    bounds = SegmentBounds(n_ref=4, k=1, n_search=5, n_tok=1)
    rng = Rng(45)
    x = Tensor(rng.normal((bounds.total, 32)), requires_grad=True)
    with Tape():
        out = layer(x, bounds=bounds, variant="concat")
        backward(tsum(mul(out, out)))
    token_grad = x.grad[bounds.refs + bounds.n_search:]
    assert np.any(token_grad != 0.0)


def test_token_attends_to_everything_in_separate_variant():
    """Token output depends on reference content under the separated layout."""
    layer = make_layer(seed=13)
    bounds = SegmentBounds(n_ref=4, k=1, n_search=5, n_tok=1)
    x = random_joint(Rng(46), bounds, 32)
    base = layer(x, bounds=bounds, variant="separate").data
    bumped = x.data.copy()
    bumped[0, 3] += 1.0  # one component of a reference token
    moved = layer(Tensor(bumped), bounds=bounds, variant="separate").data
    token_row = bounds.refs + bounds.n_search
    assert not np.allclose(base[token_row], moved[token_row])


def test_search_cannot_see_token_in_separate_variant():
    """Search queries only cover [refs, search]; the token row is invisible."""
    layer = make_layer(seed=14)
    bounds = SegmentBounds(n_ref=4, k=1, n_search=5, n_tok=1)
    x = random_joint(Rng(47), bounds, 32)
    base = layer(x, bounds=bounds, variant="separate").data
    bumped = x.data.copy()
    bumped[bounds.refs + bounds.n_search, 1] += 3.0  # one token component
    moved = layer(Tensor(bumped), bounds=bounds, variant="separate").data
    search = slice(bounds.refs, bounds.refs + bounds.n_search)
    np.testing.assert_allclose(base[search], moved[search], atol=1e-12)
    refs = slice(0, bounds.refs)
    np.testing.assert_allclose(base[refs], moved[refs], atol=1e-12)
