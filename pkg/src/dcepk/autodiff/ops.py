"""Differentiable operators. Each returns a new Tensor carrying its VJP."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..core import ShapeMismatch
from .tensor import Tensor, as_tensor


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# elementwise -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data
    return Tensor.from_op(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data
    return Tensor.from_op(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data
    return Tensor.from_op(
        out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def square(x: Tensor) -> Tensor:
    return Tensor.from_op(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,), "square")


def abs(x: Tensor) -> Tensor:  # noqa: A001
    # subgradient 0 at the kink
    return Tensor.from_op(np.abs(x.data), (x,), lambda g: (np.sign(x.data) * g,), "abs")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return Tensor.from_op(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,), "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return Tensor.from_op(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


# reductions and reshaping -----------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return Tensor.from_op(np.asarray(out, dtype=x.dtype), (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), np.asarray(1.0 / n, dtype=x.dtype))


def reshape(x: Tensor, shape) -> Tensor:
    return Tensor.from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def getitem(x: Tensor, index) -> Tensor:
    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g) if _fancy(index) else full.__setitem__(index, g)
        return (full,)

    return Tensor.from_op(np.array(x.data[index]), (x,), back, "getitem")


def _fancy(index) -> bool:
    idx = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in idx)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor.from_op(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    return Tensor.from_op(
        out, tuple(tensors), lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))), "stack"
    )


# network layers ------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with x [B, in] and weight [out, in]."""
    if x.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return Tensor.from_op(out, parents, back, "linear")


def _out_size(n, k, stride, padding, dilation):
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    """2-D cross-correlation, NCHW input, weight [out, in, kh, kw], zero padding.

    Lowered to one matrix product over im2col patches.
    """
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[1] != x.shape[1]:
        raise ShapeMismatch(f"conv2d: input {x.shape} vs weight {weight.shape}")
    b, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    ho = _out_size(h, kh, stride, padding, dilation)
    wo = _out_size(w, kw, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"conv2d: input {h}x{w} too small for kernel {kh}x{kw}, dilation {dilation}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    xp = np.ascontiguousarray(xp)
    sb, sc, sh, sw = xp.strides
    # patch matrix laid out [B, C*kh*kw, Ho*Wo]: the innermost gather runs along image rows
    view = as_strided(
        xp,
        shape=(b, c, kh, kw, ho, wo),
        strides=(sb, sc, dilation * sh, dilation * sw, stride * sh, stride * sw),
        writeable=False,
    )
    cols = view.reshape(b, c * kh * kw, ho * wo)
    wmat = weight.data.reshape(o, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(b, o, ho, wo)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        g3 = np.ascontiguousarray(g).reshape(b, o, ho * wo)
        grads = []
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g3).reshape(b, c, kh, kw, ho, wo)
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i in range(kh):
                for j in range(kw):
                    r0, c0 = i * dilation, j * dilation
                    gxp[:, :, r0:r0 + stride * (ho - 1) + 1:stride, c0:c0 + stride * (wo - 1) + 1:stride] += gcols[:, :, i, j]
            grads.append(gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp)
        else:
            grads.append(None)
        grads.append(np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape))
        if bias is not None:
            grads.append(g3.sum(axis=(0, 2)))
        return tuple(grads)

    return Tensor.from_op(out, parents, back, "conv2d")


def instance_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalisation over H and W with optional affine."""
    if x.ndim != 4:
        raise ShapeMismatch(f"instance_norm expects NCHW, got {x.shape}")
    n = x.shape[2] * x.shape[3]
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=(2, 3), keepdims=True) + eps)
    xhat = xc * inv
    g_ = 1.0 if gamma is None else gamma.data.reshape(1, -1, 1, 1)
    out = xhat * g_
    if beta is not None:
        out = out + beta.data.reshape(1, -1, 1, 1)
    parents = tuple(p for p in (x, gamma, beta) if p is not None)

    def back(g):
        dxhat = g * g_
        s1 = dxhat.sum(axis=(2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(2, 3), keepdims=True)
        dx = inv * (dxhat - s1 / n - xhat * s2 / n)
        grads = [dx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=(0, 2, 3)))
        if beta is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return Tensor.from_op(out.astype(x.dtype, copy=False), parents, back, "instance_norm")


def global_avg_pool(x: Tensor) -> Tensor:
    """[B, C, H, W] -> [B, C]."""
    n = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3))
    return Tensor.from_op(
        out, (x,),
        lambda g: (np.broadcast_to((g / n)[:, :, None, None], x.shape).astype(x.dtype, copy=True),),
        "global_avg_pool",
    )
