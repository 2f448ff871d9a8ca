"""Naive, loop-based reference implementations used to cross-check the
fast paths. Everything here works row by row and head by head on plain
ndarrays, independent of the autodiff core's batched attention."""

import numpy as np
from scipy.special import erf


def layer_norm_rows(x, gamma, beta, eps=1e-6):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        row = x[i]
        mu = row.mean()
        var = ((row - mu) ** 2).mean()
        out[i] = (row - mu) / np.sqrt(var + eps) * gamma + beta
    return out


def gelu_rows(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def dense_attention(q, k, v, heads):
    """O(L^2) attention with explicit loops over queries, keys and heads."""
    lq, dim = q.shape
    lk = k.shape[0]
    dh = dim // heads
    out = np.zeros((lq, dim))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(lq):
            scores = np.empty(lk)
            for j in range(lk):
                scores[j] = float(np.dot(q[i, sl], k[j, sl])) / np.sqrt(dh)
            scores -= scores.max()
            weights = np.exp(scores)
            weights /= weights.sum()
            acc = np.zeros(dh)
            for j in range(lk):
                acc += weights[j] * v[j, sl]
            out[i, sl] = acc
    return out


def _layer_weights(layer):
    """Pull a layer's parameters out as plain arrays."""
    return {
        "ln1_g": layer.ln1.gamma.data, "ln1_b": layer.ln1.beta.data, "eps1": layer.ln1.eps,
        "wq": layer.wq.weight.data, "bq": layer.wq.bias.data,
        "wk": layer.wk.weight.data, "bk": layer.wk.bias.data,
        "wv": layer.wv.weight.data, "bv": layer.wv.bias.data,
        "wo": layer.wo.weight.data, "bo": layer.wo.bias.data,
        "ln2_g": layer.ln2.gamma.data, "ln2_b": layer.ln2.beta.data, "eps2": layer.ln2.eps,
        "w1": layer.mlp.fc1.weight.data, "b1": layer.mlp.fc1.bias.data,
        "w2": layer.mlp.fc2.weight.data, "b2": layer.mlp.fc2.bias.data,
    }


def _project(x, w, b):
    out = np.empty((x.shape[0], w.shape[1]))
    for i in range(x.shape[0]):
        out[i] = x[i] @ w + b
    return out


def reference_layer(layer, x, heads, variant="concat", bounds=None):
    """Recompute one encoder layer's output with the naive pieces.

    variant "separate" restricts key sets per query segment: references
    attend references, search attends references+search, the token attends
    the full sequence.
    """
    w = _layer_weights(layer)
    y = layer_norm_rows(x, w["ln1_g"], w["ln1_b"], w["eps1"])
    q = _project(y, w["wq"], w["bq"])
    k = _project(y, w["wk"], w["bk"])
    v = _project(y, w["wv"], w["bv"])
    if variant == "concat":
        att = dense_attention(q, k, v, heads)
    else:
        r, s = bounds.refs, bounds.n_search
        att = np.concatenate([
            dense_attention(q[:r], k[:r], v[:r], heads),
            dense_attention(q[r:r + s], k[:r + s], v[:r + s], heads),
            dense_attention(q[r + s:], k, v, heads),
        ], axis=0)
    x = x + _project(att, w["wo"], w["bo"])
    y2 = layer_norm_rows(x, w["ln2_g"], w["ln2_b"], w["eps2"])
    hidden = gelu_rows(_project(y2, w["w1"], w["b1"]))
    return x + _project(hidden, w["w2"], w["b2"])


def reference_encoder(encoder, x, heads, variant="concat", bounds=None):
    """Compose reference_layer over the whole stack."""
    for layer in encoder.layers:
        x = reference_layer(layer, x, heads, variant=variant, bounds=bounds)
    return x


def naive_matmul(a, b):
    """Triple-loop matrix product for oracle comparisons."""
    m, inner = a.shape
    inner2, n = b.shape
    assert inner == inner2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for kk in range(inner):
                acc += a[i, kk] * b[kk, j]
            out[i, j] = acc
    return out


def naive_conv2d(x, kernel, stride):
    """Loop-based non-overlapping patch convolution."""
    c_out, c_in, p, _ = kernel.shape
    c, h, w = x.shape
    hp, wp = h // stride, w // stride
    out = np.zeros((c_out, hp, wp))
    for co in range(c_out):
        for bi in range(hp):
            for bj in range(wp):
                acc = 0.0
                for ci in range(c_in):
                    for di in range(p):
                        for dj in range(p):
                            acc += x[ci, bi * stride + di, bj * stride + dj] * kernel[co, ci, di, dj]
                out[co, bi, bj] = acc
    return out


def naive_conv2d_same(x, kernel, bias=None):
    """Loop-based stride-1 zero-padded convolution."""
    c_out, c_in, kh, kw = kernel.shape
    c, h, w = x.shape
    pad = kh // 2
    out = np.zeros((c_out, h, w))
    for co in range(c_out):
        for i in range(h):
            for j in range(w):
                acc = 0.0 if bias is None else float(bias[co])
                for ci in range(c_in):
                    for di in range(kh):
                        for dj in range(kw):
                            si, sj = i + di - pad, j + dj - pad
                            if 0 <= si < h and 0 <= sj < w:
                                acc += x[ci, si, sj] * kernel[co, ci, di, dj]
                out[co, i, j] = acc
    return out
