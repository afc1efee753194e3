"""Minimal parameter containers for building networks."""
from __future__ import annotations

import math

import numpy as np

from . import ops
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, dtype=np.float32):
        super().__init__(np.array(data, dtype=dtype), requires_grad=True)


class Module:
    """Holds parameters and child modules in definition order."""

    def __setattr__(self, name, value):
        if isinstance(value, (Parameter, Module)):
            self.__dict__.setdefault("_order", []).append(name)
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name in self.__dict__.get("_order", []):
            value = getattr(self, name)
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng: np.random.Generator, stride=1, padding=0, dilation=1, bias=True):
        # He-uniform fan-in init
        bound = math.sqrt(6.0 / (c_in * kernel * kernel))
        self.weight = Parameter(rng.uniform(-bound, bound, (c_out, c_in, kernel, kernel)))
        if bias:
            self.bias = Parameter(np.zeros(c_out))
        else:
            self.bias = None
        self.stride, self.padding, self.dilation = stride, padding, dilation

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


class Linear(Module):
    def __init__(self, n_in, n_out, rng: np.random.Generator):
        bound = math.sqrt(6.0 / n_in)
        self.weight = Parameter(rng.uniform(-bound, bound, (n_out, n_in)))
        self.bias = Parameter(np.zeros(n_out))

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class InstanceNorm(Module):
    def __init__(self, channels, eps=1e-5):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.eps = eps

    def forward(self, x):
        return ops.instance_norm(x, self.gamma, self.beta, self.eps)
