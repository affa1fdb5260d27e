"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(fn: Callable[[], Tensor], leaf: Tensor, index, h: float) -> float:
    flat = leaf.data.reshape(-1)
    orig = flat[index]
    flat[index] = orig + h
    up = float(fn().data.sum(dtype=np.float64))
    flat[index] = orig - h
    down = float(fn().data.sum(dtype=np.float64))
    flat[index] = orig
    return (up - down) / (2.0 * h)


def gradient_errors(fn: Callable[[], Tensor], leaves: Sequence[Tensor], h: float = 1e-3,
                    max_entries: int | None = None, seed: int = 0) -> list[float]:
    """Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||) per leaf.

    ``fn`` rebuilds the scalar loss from the current leaf values.  With
    ``max_entries`` only that many randomly chosen coordinates per leaf are
    probed.
    """
    for leaf in leaves:
        leaf.grad = None
    backward(fn())
    rng = np.random.default_rng(seed)
    errors = []
    for leaf in leaves:
        analytic_full = np.zeros(leaf.size) if leaf.grad is None else leaf.grad.reshape(-1).astype(np.float64)
        if max_entries is None or leaf.size <= max_entries:
            idx = np.arange(leaf.size)
        else:
            idx = np.sort(rng.choice(leaf.size, size=max_entries, replace=False))
        analytic = analytic_full[idx]
        numeric = np.array([numerical_grad(fn, leaf, int(i), h) for i in idx])
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        errors.append(float(np.linalg.norm(analytic - numeric) / scale))
    return errors
