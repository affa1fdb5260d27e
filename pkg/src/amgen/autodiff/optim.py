"""Adam with bias correction; the only place tensors are mutated in place."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import DimensionError, Tensor


def adam_step(params, grads, m, v, step: int, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update of ``params`` (numpy arrays) in place.

    ``m`` and ``v`` are the per-parameter moment buffers and ``step`` is the
    1-based count used for bias correction.
    """
    for p, g, mb, vb in zip(params, grads, m, v):
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        g64 = g.astype(np.float64)
        mb *= beta1
        mb += (1.0 - beta1) * g64
        vb *= beta2
        vb += (1.0 - beta2) * g64 * g64
        m_hat = mb / (1.0 - beta1 ** step)
        v_hat = vb / (1.0 - beta2 ** step)
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)


class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.shape, dtype=np.float64) for p in self.params]
        self.v = [np.zeros(p.shape, dtype=np.float64) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.m, self.v,
                  self.t, self.lr, self.beta1, self.beta2, self.eps)
