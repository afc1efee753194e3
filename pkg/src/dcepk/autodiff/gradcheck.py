"""Central-difference gradient checking for single-output functions."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], index: int, eps: float = 1e-6) -> np.ndarray:
    base = [np.array(x, dtype=np.float64) for x in inputs]
    x = base[index]
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        fp = fn(*[Tensor(b) for b in base]).item()
        flat[k] = orig - eps
        fm = fn(*[Tensor(b) for b in base]).item()
        flat[k] = orig
        gflat[k] = (fp - fm) / (2 * eps)
    return grad


def analytic_grads(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray]) -> list[np.ndarray]:
    ts = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    backward(fn(*ts))
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in ts]


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, floor), elementwise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(fn, inputs, eps: float = 1e-6, floor: float = 1e-8) -> float:
    """Worst relative error between tape and central-difference gradients over all inputs."""
    grads = analytic_grads(fn, inputs)
    return max(max_relative_error(g, numerical_grad(fn, inputs, i, eps), floor) for i, g in enumerate(grads))
