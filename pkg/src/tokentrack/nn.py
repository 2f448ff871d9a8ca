"""Small neural-net building blocks on top of the autodiff core."""

import numpy as np

from .autodiff import Tensor, add, gelu, layer_norm, matmul

DTYPES = {"f8": np.float64, "f4": np.float32}


class Module:
    """Base class; children and parameters are discovered by attribute walk."""

    def named_parameters(self, prefix=""):
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(prefix + name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{prefix}{name}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: checkpoint {arr.shape} vs model {p.data.shape}")
            p.data = arr.copy()

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def uniform_param(rng, shape, bound, dtype=np.float64):
    data = rng.uniform(shape, low=-bound, high=bound).astype(dtype)
    return Tensor(data, requires_grad=True)


def normal_param(rng, shape, std, dtype=np.float64):
    data = rng.normal(shape, std=std).astype(dtype)
    return Tensor(data, requires_grad=True)


def zeros_param(shape, dtype=np.float64):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones_param(shape, dtype=np.float64):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


class Linear(Module):
    """y = x @ W + b, weight uniform in +-1/sqrt(fan_in), bias zero.

    frozen_bias keeps the bias term in the computation but out of the
    trainable set, for positions where it is provably a no-op.
    """

    def __init__(self, rng, in_dim, out_dim, zero_init=False, frozen_bias=False, dtype=np.float64):
        if zero_init:
            self.weight = zeros_param((in_dim, out_dim), dtype)
        else:
            bound = 1.0 / np.sqrt(in_dim)
            self.weight = uniform_param(rng, (in_dim, out_dim), bound, dtype)
        self.bias = zeros_param((out_dim,), dtype)
        if frozen_bias:
            self.bias.requires_grad = False

    def __call__(self, x):
        return add(matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-6, dtype=np.float64):
        self.gamma = ones_param((dim,), dtype)
        self.beta = zeros_param((dim,), dtype)
        self.eps = eps

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta, eps=self.eps)


class Mlp(Module):
    """Two-layer feed-forward with gelu, the transformer default."""

    def __init__(self, rng, dim, hidden, out_dim=None, dtype=np.float64):
        self.fc1 = Linear(rng.child("fc1"), dim, hidden, dtype=dtype)
        self.fc2 = Linear(rng.child("fc2"), hidden, out_dim or dim, dtype=dtype)

    def __call__(self, x):
        return self.fc2(gelu(self.fc1(x)))
