"""Pure numpy reference kernels (fallback when the compiled module is absent).

Exponential convolution of a piecewise-linear plasma curve::

    F(t) = integral_{t0}^{t} cp(tau) * exp(-kep * (t - tau)) dtau

evaluated exactly on the sample grid with the recursion

    F[i+1] = E * F[i] + dt * (ga(x) * cp[i] + gb(x) * cp[i+1]),
    x = kep * dt,  E = exp(-x),
    ga(x) = (1 - (1 + x) e^-x) / x^2,  gb(x) = (x - 1 + e^-x) / x^2.

Both weights tend to 1/2 as x -> 0, so kep = 0 is the trapezoid rule.
Shapes: cp (B, n), kep (B, V), outputs (B, V, n).
"""
from __future__ import annotations

import math

import numpy as np

SERIES_CUTOFF = 0.1
_N_TERMS = 14

# Maclaurin coefficients of ga, gb; used below SERIES_CUTOFF where the closed
# forms lose digits to cancellation.
GA_COEF = np.array([(-1) ** k * (k + 1) / math.factorial(k + 2) for k in range(_N_TERMS)])
GB_COEF = np.array([(-1) ** k / math.factorial(k + 2) for k in range(_N_TERMS)])
DGA_COEF = np.array([(k + 1) * GA_COEF[k + 1] for k in range(_N_TERMS - 1)])
DGB_COEF = np.array([(k + 1) * GB_COEF[k + 1] for k in range(_N_TERMS - 1)])


def _horner(coef, x):
    out = np.full_like(x, coef[-1])
    for c in coef[-2::-1]:
        out = out * x + c
    return out


def step_weights(x):
    """Return ``E, ga, gb, dga/dx, dgb/dx`` for an array of ``x = kep*dt >= 0``."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-x)
    small = x < SERIES_CUTOFF
    xs = np.where(small, x, 0.0)
    xl = np.where(small, 1.0, x)
    el = np.where(small, 0.0, e)
    ga = np.where(small, _horner(GA_COEF, xs), (1.0 - (1.0 + xl) * el) / xl**2)
    gb = np.where(small, _horner(GB_COEF, xs), (xl - 1.0 + el) / xl**2)
    dga = np.where(small, _horner(DGA_COEF, xs), (el * (xl * xl + 2 * xl + 2) - 2.0) / xl**3)
    dgb = np.where(small, _horner(DGB_COEF, xs), (2.0 - xl - (xl + 2.0) * el) / xl**3)
    return e, ga, gb, dga, dgb


def expconv(cp, t, kep, with_derivative=False):
    cp = np.ascontiguousarray(cp, dtype=np.float64)
    t = np.ascontiguousarray(t, dtype=np.float64)
    kep = np.ascontiguousarray(kep, dtype=np.float64)
    nb, n = cp.shape
    nv = kep.shape[1]
    out = np.zeros((nb, nv, n))
    dout = np.zeros((nb, nv, n)) if with_derivative else None
    for i in range(n - 1):
        dt = t[i + 1] - t[i]
        e, ga, gb, dga, dgb = step_weights(kep * dt)
        c0 = cp[:, i : i + 1]
        c1 = cp[:, i + 1 : i + 2]
        out[:, :, i + 1] = e * out[:, :, i] + dt * (ga * c0 + gb * c1)
        if with_derivative:
            dout[:, :, i + 1] = (
                -dt * e * out[:, :, i]
                + e * dout[:, :, i]
                + dt * dt * (dga * c0 + dgb * c1)
            )
    return out, dout


def expconv_vjp(cp, t, kep, g):
    """Vector-Jacobian product of :func:`expconv` for upstream gradient ``g``.

    Returns ``(grad_cp (B, n), grad_kep (B, V))``.
    """
    cp = np.ascontiguousarray(cp, dtype=np.float64)
    t = np.ascontiguousarray(t, dtype=np.float64)
    kep = np.ascontiguousarray(kep, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    nb, n = cp.shape
    f, df = expconv(cp, t, kep, with_derivative=True)
    grad_kep = np.einsum("bvn,bvn->bv", g, df)
    grad_cp = np.zeros((nb, n))
    lam = g[:, :, n - 1].copy()
    for i in range(n - 2, -1, -1):
        dt = t[i + 1] - t[i]
        e, ga, gb, _, _ = step_weights(kep * dt)
        grad_cp[:, i] += dt * np.sum(ga * lam, axis=1)
        grad_cp[:, i + 1] += dt * np.sum(gb * lam, axis=1)
        lam = g[:, :, i] + e * lam
    return grad_cp, grad_kep
