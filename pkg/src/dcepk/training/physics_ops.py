"""Differentiable forward physics f_TK: scaled PK patches and C_p -> DCE signal.

Evaluated in float64 with a hand-written adjoint; the result is cast back to
the dtype of the PK tensor. Parameters are clamped to their physical range
before the model is applied (zero gradient where a clamp is active).
"""
from __future__ import annotations

import numpy as np

from .. import kernels
from ..autodiff import Tensor
from ..core import AcqParams, ShapeMismatch, TkModel
from ..networks import CP_SCALE, SCALE_FACTORS
from ..physics import cumulative_integral, signal_ratio, signal_ratio_derivative

VE_MIN = 1e-6


def _cumtrapz_adjoint(g, t):
    """Adjoint of the cumulative trapezoid along the last axis."""
    dt = np.diff(t)
    # I[i] = sum_{j<i} dt_j (c_j + c_{j+1}) / 2
    tail = np.cumsum(g[..., ::-1], axis=-1)[..., ::-1]  # tail[k] = sum_{i>=k} g[i]
    out = np.zeros_like(g)
    out[..., :-1] += 0.5 * dt * tail[..., 1:]
    out[..., 1:] += 0.5 * dt * tail[..., 1:]
    return out


def tk_signal(pk: Tensor, cp: Tensor, s0, t1, acq: AcqParams, model) -> Tensor:
    """S = S0 * ratio(Ct) for every pixel of every patch.

    pk: [B, C, H, W] in network scale; cp: [B, n] in network scale;
    s0, t1: [B, H, W] arrays (not differentiated).
    """
    model = TkModel.parse(model)
    scale = np.asarray(SCALE_FACTORS[model])
    b, c, h, w = pk.shape
    n = acq.n_frames
    if c != model.n_params or cp.shape != (b, n):
        raise ShapeMismatch(f"tk_signal: pk {pk.shape}, cp {cp.shape} for {model.value} with {n} frames")
    s0 = np.asarray(s0, dtype=np.float64).reshape(b, h * w)
    t1 = np.asarray(t1, dtype=np.float64).reshape(b, h * w)
    if s0.shape != (b, h * w) or t1.shape != (b, h * w):
        raise ShapeMismatch("tk_signal: s0/t1 must be [B, H, W]")
    t = acq.time_seconds

    raw = pk.data.astype(np.float64).reshape(b, c, h * w) / scale[None, :, None]
    kt_live = raw[:, 0] > 0
    vp_live = raw[:, 1] > 0
    kt = np.where(kt_live, raw[:, 0], 0.0) / 60.0
    vp = np.where(vp_live, raw[:, 1], 0.0)
    cp_raw = cp.data.astype(np.float64) / CP_SCALE
    cp_live = cp_raw > 0
    cpv = np.where(cp_live, cp_raw, 0.0)

    if model is TkModel.ETOFTS:
        ve_live = raw[:, 2] > VE_MIN
        ve = np.where(ve_live, raw[:, 2], VE_MIN)
        kep = kt / ve
        conv, _ = kernels.expconv(cpv, t, kep)  # [B, V, n]
    else:
        conv = np.broadcast_to(cumulative_integral(cpv, t)[:, None, :], (b, h * w, n))
    ct = vp[..., None] * cpv[:, None, :] + kt[..., None] * conv
    ratio = signal_ratio(ct, t1, acq)
    out = (s0[..., None] * ratio).transpose(0, 2, 1).reshape(b, n, h, w)

    def back(g):
        g = g.astype(np.float64).reshape(b, n, h * w).transpose(0, 2, 1)  # [B, V, n]
        g_ct = g * s0[..., None] * signal_ratio_derivative(ct, t1, acq)
        d_vp = np.einsum("bvn,bn->bv", g_ct, cpv)
        d_kt = np.einsum("bvn,bvn->bv", g_ct, conv)
        d_cp = np.einsum("bvn,bv->bn", g_ct, vp)
        grads = np.zeros((b, c, h * w))
        if model is TkModel.ETOFTS:
            g_cp_conv, g_kep = kernels.expconv_vjp(cpv, t, kep, g_ct * kt[..., None])
            d_cp += g_cp_conv
            d_kt = d_kt + g_kep / ve
            grads[:, 2] = np.where(ve_live, -g_kep * kt / ve**2, 0.0) / scale[2]
        else:
            d_cp += _cumtrapz_adjoint(np.einsum("bvn,bv->bn", g_ct, kt), t)
        grads[:, 0] = np.where(kt_live, d_kt, 0.0) / (60.0 * scale[0])
        grads[:, 1] = np.where(vp_live, d_vp, 0.0) / scale[1]
        g_pk = grads.reshape(b, c, h, w).astype(pk.dtype)
        g_cpt = (np.where(cp_live, d_cp, 0.0) / CP_SCALE).astype(cp.dtype)
        return g_pk, g_cpt

    return Tensor.from_op(out.astype(pk.dtype), (pk, cp), back, "tk_signal")
