"""AdamW with decoupled weight decay, plus gradient clipping and the
warmup/drop learning-rate schedule."""

import numpy as np


def clip_grad_norm(params, max_norm):
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class AdamW:
    """Decoupled-weight-decay Adam over named parameter groups.

    groups: list of {"params": [Tensor], "lr": float}. step() takes an
    lr_scale multiplier so warmup and the epoch drop compose with the
    per-group base rates. Parameters whose grad is None are skipped
    entirely (no moment update, no decay), so modules unused by the
    current task stay exactly at initialization.
    """

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        self.groups = groups
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {}
        self._v = {}

    def step(self, lr_scale=1.0):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for group in self.groups:
            lr = group["lr"] * lr_scale
            for p in group["params"]:
                if p.grad is None:
                    continue
                key = id(p)
                if key not in self._m:
                    self._m[key] = np.zeros_like(p.data)
                    self._v[key] = np.zeros_like(p.data)
                g = p.grad
                m = self._m[key]
                v = self._v[key]
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                m_hat = m / bias1
                v_hat = v / bias2
                p.data -= lr * self.weight_decay * p.data     # decoupled decay
                p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for group in self.groups:
            for p in group["params"]:
                p.zero_grad()


def lr_scale(step, epoch, warmup_steps, drop_epoch):
    """Linear warmup over the first steps, times-0.1 from the drop epoch on."""
    scale = 1.0
    if warmup_steps > 0 and step < warmup_steps:
        scale *= (step + 1) / warmup_steps
    if epoch >= drop_epoch:
        scale *= 0.1
    return scale
