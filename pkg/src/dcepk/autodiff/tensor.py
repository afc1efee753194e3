"""Reverse-mode autodiff over dense numpy arrays.

Every differentiable op builds its output with :meth:`Tensor.from_op`,
passing a closure that maps the output gradient to one gradient per parent
(``None`` for parents that need none). :func:`backward` walks the recorded
tape once in reverse topological order.
"""
from __future__ import annotations

import numpy as np

from ..core import DcePkError, ShapeMismatch


class NonScalarOutput(DcePkError, ValueError):
    pass


class TapeMissing(DcePkError, RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._consumed = False

    @classmethod
    def from_op(cls, data, parents, backward, op: str) -> "Tensor":
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # operator sugar; implementations live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def backward(self):
        backward(self)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every leaf requiring grad.

    The output must be a single-element tensor. A tape can be walked once;
    calling again on the same output raises :class:`TapeMissing`.
    """
    if output.data.size != 1:
        raise NonScalarOutput(f"backward needs a scalar output, got shape {output.shape}")
    if output._consumed:
        raise TapeMissing("tape already consumed by a previous backward; rebuild the graph")
    if not output.requires_grad:
        raise TapeMissing("output does not depend on any tensor requiring grad")
    order = _toposort(output)
    grads = {id(output): np.ones_like(output.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise ShapeMismatch(f"{node._op}: gradient {pg.shape} for parent {parent.shape}")
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
        node._consumed = True
        node._backward = None
        node._parents = ()
