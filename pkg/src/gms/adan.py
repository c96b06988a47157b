"""ADAN (adaptive Nesterov momentum) for lists of numpy arrays.

Follows Xie et al. (2022), with bias correction and decoupled weight
decay.  ``betas`` use the ``1 - beta`` convention of the reference
implementation, i.e. ``(0.98, 0.92, 0.99)``.
"""

from __future__ import annotations

import math

import numpy as np


class Adan:
    def __init__(self, params, betas=(0.98, 0.92, 0.99), eps=1e-8, weight_decay=0.0):
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.k = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.n = [np.zeros_like(p) for p in params]
        self.prev = [None] * len(params)

    def step(self, params, grads, lr: float):
        """Update ``params`` in place."""
        b1, b2, b3 = self.betas
        self.k += 1
        bc1 = 1 - b1**self.k
        bc2 = 1 - b2**self.k
        bc3 = 1 - b3**self.k
        for i, (p, g) in enumerate(zip(params, grads)):
            diff = np.zeros_like(g) if self.prev[i] is None else g - self.prev[i]
            self.m[i] *= b1
            self.m[i] += (1 - b1) * g
            self.v[i] *= b2
            self.v[i] += (1 - b2) * diff
            self.n[i] *= b3
            self.n[i] += (1 - b3) * (g + b2 * diff) ** 2
            denom = np.sqrt(self.n[i]) / math.sqrt(bc3) + self.eps
            update = (self.m[i] / bc1 + b2 * self.v[i] / bc2) / denom
            p -= lr * update
            if self.weight_decay:
                p /= 1 + lr * self.weight_decay
            self.prev[i] = g.copy()


def cosine_warmup_lr(i: int, total: int, lr: float, warmup: int, min_lr: float) -> float:
    """Learning rate for 1-based iteration ``i``: linear warm-up, then cosine decay."""
    if warmup > 0 and i <= warmup:
        return lr * i / warmup
    span = max(total - warmup, 1)
    return max(0.5 * (math.cos(math.pi * (i - warmup) / span) + 1) * lr, min_lr)
