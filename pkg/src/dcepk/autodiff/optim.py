"""Adam and the linear-decay learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import ConfigError, ShapeMismatch
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update, in place on ``params`` (arrays or Parameters).

    Returns ``(params, state)``. A ``None`` gradient counts as zero.
    """
    datas = [p.data if isinstance(p, Tensor) else p for p in params]
    if not state.first_moment:
        state.first_moment = [np.zeros_like(d) for d in datas]
        state.second_moment = [np.zeros_like(d) for d in datas]
    if len(state.first_moment) != len(datas) or len(grads) != len(datas):
        raise ShapeMismatch("adam_step: parameter, gradient and moment lists differ in length")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for d, g, m, v in zip(datas, grads, state.first_moment, state.second_moment):
        if g is None:
            g = np.zeros_like(d)
        elif g.shape != d.shape:
            raise ShapeMismatch(f"adam_step: gradient {g.shape} for parameter {d.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        d -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(d.dtype, copy=False)
    return params, state


class Adam:
    def __init__(self, params, lr=1e-5, betas=(0.5, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = float(value)

    def step(self):
        adam_step(self.state, self.params, [p.grad for p in self.params])

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def lr_linear_decay(initial_lr: float, epoch: int, total_epochs: int, decay_start: int | None = None) -> float:
    """Constant until ``decay_start`` (default total/2), then linear to 0 at ``total_epochs``."""
    if total_epochs < 1:
        raise ConfigError("total_epochs must be positive")
    start = total_epochs // 2 if decay_start is None else decay_start
    if not 0 <= start <= total_epochs:
        raise ConfigError("decay_start must lie in [0, total_epochs]")
    if epoch <= start:
        return float(initial_lr)
    if epoch >= total_epochs:
        return 0.0
    return float(initial_lr) * (total_epochs - epoch) / (total_epochs - start)
