"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray; while a Tape is active, every op appends a node
(output, inputs, backward closure) to it. Append order is a topological
order of the graph, so backward() is a single reversed sweep that visits
each node exactly once. With no tape active, ops are plain numpy compute,
which is what inference uses.

All randomness lives in rng.Rng; nothing in this module draws random
numbers, so forward and backward are bit-reproducible for fixed inputs.
"""

import numpy as np
from scipy.special import erf

DEFAULT_DTYPE = np.float64

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""


class GraphError(RuntimeError):
    """backward() called on a detached or non-scalar output."""


# ---------------------------------------------------------------------------
# tape

_ACTIVE_TAPE = None


class Tape:
    """Records op nodes during a forward pass; used once for backward."""

    def __init__(self):
        self.nodes = []  # (out, inputs, backward_fn), append order = topo order

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise GraphError("a tape is already active; nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False


def tape_active():
    return _ACTIVE_TAPE is not None


class Tensor:
    """An ndarray plus an accumulated gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)  # copy: g may be a shared buffer
        else:
            self.grad += g

    def require_finite(self, context=""):
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite values in {context or 'tensor'}")
        return self

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; every method defers to the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _record(out, inputs, backward_fn):
    """Attach out to the active tape when any input participates in the graph."""
    if _ACTIVE_TAPE is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE_TAPE.nodes.append((out, inputs, backward_fn))
    return out


def backward(loss):
    """Reverse sweep from a scalar loss, accumulating grads into leaves."""
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar, got shape {loss.shape}")
    if _ACTIVE_TAPE is None:
        raise GraphError("backward called with no active tape")
    if not loss.requires_grad:
        raise GraphError("loss is detached from the recorded graph")
    loss.grad = np.ones_like(loss.data)
    for out, inputs, backward_fn in reversed(_ACTIVE_TAPE.nodes):
        if out.grad is None:
            continue  # no downstream consumer fed gradient into this node
        backward_fn(out.grad)


def _unbroadcast(grad, shape):
    """Sum grad over the axes numpy broadcast when producing it."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)
    out = Tensor(a.data + b.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _record(out, (a, b), bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)
    out = Tensor(a.data - b.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.shape))

    return _record(out, (a, b), bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)
    out = Tensor(a.data * b.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _record(out, (a, b), bwd)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)
    out = Tensor(a.data / b.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _record(out, (a, b), bwd)


def power(a, exponent):
    """a ** exponent for a constant scalar exponent."""
    a = as_tensor(a)
    e = float(exponent)
    out = Tensor(a.data ** e)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * e * a.data ** (e - 1.0))

    return _record(out, (a,), bwd)


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)
    out = Tensor(np.maximum(a.data, b.data))

    def bwd(g):
        # subgradient: ties route to the first operand
        take_a = a.data >= b.data
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * ~take_a, b.shape))

    return _record(out, (a, b), bwd)


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)
    out = Tensor(np.minimum(a.data, b.data))

    def bwd(g):
        take_a = a.data <= b.data
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * ~take_a, b.shape))

    return _record(out, (a, b), bwd)


def clamp(a, lo, hi):
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi))

    def bwd(g):
        if a.requires_grad:
            inside = (a.data > lo) & (a.data < hi)
            a.accumulate_grad(g * inside)

    return _record(out, (a,), bwd)


def absolute(a):
    a = as_tensor(a)
    out = Tensor(np.abs(a.data))

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * np.sign(a.data))

    return _record(out, (a,), bwd)


def exp(a):
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * out.data)

    return _record(out, (a,), bwd)


def log(a):
    a = as_tensor(a)
    out = Tensor(np.log(a.data))

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g / a.data)

    return _record(out, (a,), bwd)


def sqrt(a):
    a = as_tensor(a)
    out = Tensor(np.sqrt(a.data))

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * 0.5 / out.data)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# activations

def relu(a):
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > 0.0))

    return _record(out, (a,), bwd)


def tanh(a):
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data))

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * (1.0 - out.data * out.data))

    return _record(out, (a,), bwd)


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    out = Tensor(np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))))

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * out.data * (1.0 - out.data))

    return _record(out, (a,), bwd)


def gelu(a):
    """Exact-erf gaussian error linear unit: x * Phi(x)."""
    a = as_tensor(a)
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = Tensor(x * phi)

    def bwd(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
            a.accumulate_grad(g * (phi + x * pdf))

    return _record(out, (a,), bwd)


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid, "gelu": gelu}


def activation(a, kind):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}, expected one of {sorted(_ACTIVATIONS)}")
    return fn(a)


# ---------------------------------------------------------------------------
# reductions

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.accumulate_grad(np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate_grad(np.broadcast_to(g, a.shape).copy())

    return _record(out, (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        count = a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# structural ops

def matmul(a, b):
    """2-D or batched matrix product; batch dims must match exactly."""
    a, b = as_tensor(a), as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dims differ: {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b.accumulate_grad(np.swapaxes(a.data, -1, -2) @ g)

    return _record(out, (a, b), bwd)


def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.shape))

    return _record(out, (a,), bwd)


def transpose(a, axes):
    a = as_tensor(a)
    out = Tensor(a.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g.transpose(inverse))

    return _record(out, (a,), bwd)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]

    def bwd(g):
        start = 0
        for t, n in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, start + n)
                t.accumulate_grad(g[tuple(idx)])
            start += n

    return _record(out, tuple(tensors), bwd)


def narrow(a, axis, start, length):
    """Contiguous slice along one axis; backward scatters into zeros."""
    a = as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(a.data[idx].copy())

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a.accumulate_grad(full)

    return _record(out, (a,), bwd)


def pad_last2(a, pad):
    """Zero-pad the last two axes by `pad` on every side."""
    a = as_tensor(a)
    widths = [(0, 0)] * (a.ndim - 2) + [(pad, pad), (pad, pad)]
    out = Tensor(np.pad(a.data, widths))

    def bwd(g):
        if a.requires_grad:
            idx = [slice(None)] * (a.ndim - 2) + [slice(pad, g.shape[-2] - pad), slice(pad, g.shape[-1] - pad)]
            a.accumulate_grad(g[tuple(idx)])

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# normalization and attention pieces

def softmax_lastdim(a):
    """Row-stable softmax over the last axis."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        if a.requires_grad:
            # dL/dx = y * (g - sum(g * y))
            dot = (g * y).sum(axis=-1, keepdims=True)
            a.accumulate_grad(y * (g - dot))

    return _record(out, (a,), bwd)


def layer_norm(a, gamma, beta, eps=1e-6):
    """Normalize the last axis to zero mean, unit variance, then scale and shift.

    Composed from differentiable primitives, so the gradient comes for free.
    """
    mu = tmean(a, axis=-1, keepdims=True)
    centered = sub(a, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    inv = div(1.0, sqrt(add(var, eps)))
    normed = mul(centered, inv)
    return add(mul(normed, gamma), beta)


def conv2d(x, kernel, stride):
    """Non-overlapping patch convolution: stride must equal the kernel extent.

    x is (C, H, W), kernel is (C_out, C, p, p); output is (C_out, H/p, W/p).
    With stride == p, patch extraction is a pure reshape/transpose, so this
    reduces to one matmul over flattened patches.
    """
    x = as_tensor(x)
    kernel = as_tensor(kernel, like=x)
    c_out, c_in, kh, kw = kernel.shape
    if kh != kw or stride != kh:
        raise ShapeError(f"patch conv needs square kernel with stride == extent, got kernel {kernel.shape} stride {stride}")
    c, h, w = x.shape
    if c != c_in:
        raise ShapeError(f"channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if h % stride or w % stride:
        raise ShapeError(f"input {x.shape} not divisible by patch extent {stride}")
    hp, wp = h // stride, w // stride
    patches = reshape(x, (c, hp, stride, wp, stride))
    patches = transpose(patches, (1, 3, 0, 2, 4))           # (hp, wp, c, p, p)
    patches = reshape(patches, (hp * wp, c * stride * stride))
    weight = transpose(reshape(kernel, (c_out, c * stride * stride)), (1, 0))
    out = matmul(patches, weight)                            # (hp*wp, c_out)
    out = transpose(out, (1, 0))
    return reshape(out, (c_out, hp, wp))


def conv2d_same(x, kernel, bias=None):
    """Odd-kernel, stride-1, zero-padded convolution keeping spatial extent.

    x is (C, H, W), kernel is (C_out, C, q, q) with odd q. Built from pad,
    slice, concat and one matmul, so it stays inside the recorded graph.
    """
    x = as_tensor(x)
    kernel = as_tensor(kernel, like=x)
    c_out, c_in, kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"same-conv needs a square odd kernel, got {kernel.shape}")
    c, h, w = x.shape
    if c != c_in:
        raise ShapeError(f"channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    pad = kh // 2
    padded = pad_last2(x, pad)
    taps = []
    for di in range(kh):
        row = narrow(padded, 1, di, h)
        for dj in range(kw):
            taps.append(narrow(row, 2, dj, w))               # (c, h, w) shifted view
    stacked = concat(taps, axis=0)                           # (kh*kw*c, h, w), tap-major
    cols = transpose(reshape(stacked, (kh * kw * c, h * w)), (1, 0))
    # match tap-major column order: kernel (c_out, c, kh, kw) -> (c_out, kh, kw, c)
    weight = reshape(transpose(kernel, (0, 2, 3, 1)), (c_out, kh * kw * c))
    out = matmul(cols, transpose(weight, (1, 0)))            # (h*w, c_out)
    if bias is not None:
        out = add(out, bias)
    return reshape(transpose(out, (1, 0)), (c_out, h, w))


# ---------------------------------------------------------------------------
# gradient checking

def finite_difference(f, param, index, eps=1e-5):
    """Central difference of scalar-valued f with respect to one coordinate."""
    flat = param.data.reshape(-1)
    saved = flat[index]
    flat[index] = saved + eps
    hi = float(f().data)
    flat[index] = saved - eps
    lo = float(f().data)
    flat[index] = saved
    return (hi - lo) / (2.0 * eps)


def relative_error(a, b):
    return abs(a - b) / max(1e-8, abs(a) + abs(b))


def grad_check(f, params, eps=1e-5, samples_per_param=50, rng=None, return_details=False):
    """Compare analytic gradients of scalar f() against central differences.

    f must rebuild its forward pass on every call (it is invoked once under
    a fresh tape and then repeatedly, perturbed, outside any tape). Returns
    the max relative error over all sampled coordinates, or a per-parameter
    dict when return_details is set.
    """
    for p in params:
        p.zero_grad()
    with Tape():
        loss = f()
        loss.require_finite("grad_check loss")
        backward(loss)
    analytic = []
    for p in params:
        if p.grad is None:
            raise GraphError("parameter received no gradient; is it used by f?")
        analytic.append(p.grad.copy())
    details = {}
    worst = 0.0
    for pi, p in enumerate(params):
        n = p.data.size
        if rng is None:
            indices = np.arange(min(samples_per_param, n))
        elif n <= samples_per_param:
            indices = np.arange(n)
        else:
            indices = rng.choice(n, samples_per_param)
        p_worst = 0.0
        for idx in indices:
            idx = int(idx)
            numeric = finite_difference(f, p, idx, eps=eps)
            ana = float(analytic[pi].reshape(-1)[idx])
            err = relative_error(ana, numeric)
            p_worst = max(p_worst, err)
        details[pi] = p_worst
        worst = max(worst, p_worst)
    for p, g in zip(params, analytic):
        p.grad = g
    if return_details:
        return worst, details
    return worst
