"""Finite-difference gradient checking for numcore primitives."""

from typing import Callable

import numpy as np

from .tensor import Tensor, backward


def grad_check(fn: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    The denominator per coordinate is max(|analytic|, |numeric|, 1e-8). `fn`
    must be pure and deterministic; `x` is not modified.
    """
    point = Tensor(x.data.copy(), requires_grad=True)
    out = fn(point)
    backward(out)
    analytic = point.grad if point.grad is not None else np.zeros_like(point.data)

    base = x.data.copy()
    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = fn(Tensor(base.copy())).item()
        flat[i] = original - step
        minus = fn(Tensor(base.copy())).item()
        flat[i] = original
        numeric.reshape(-1)[i] = (plus - minus) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))
