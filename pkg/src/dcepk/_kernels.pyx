# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled exponential-convolution kernels.

Same recursion and series cut-over as ``_kernels_py``; results agree to
round-off. Loops run voxel-major so each time series is a contiguous scan.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

cdef double SERIES_CUTOFF = 0.1
cdef int N_TERMS = 14
cdef double GA_C[14]
cdef double GB_C[14]
cdef double DGA_C[13]
cdef double DGB_C[13]


cdef void _init_coef():
    cdef int k
    cdef double fact = 2.0  # (k + 2)!
    for k in range(N_TERMS):
        if k > 0:
            fact *= (k + 2)
        GA_C[k] = (-1.0 if k % 2 else 1.0) * (k + 1) / fact
        GB_C[k] = (-1.0 if k % 2 else 1.0) / fact
    for k in range(N_TERMS - 1):
        DGA_C[k] = (k + 1) * GA_C[k + 1]
        DGB_C[k] = (k + 1) * GB_C[k + 1]


_init_coef()


cdef inline double _horner(double* c, int m, double x) noexcept nogil:
    cdef double out = c[m - 1]
    cdef int k
    for k in range(m - 2, -1, -1):
        out = out * x + c[k]
    return out


cdef inline void _weights(double x, double* e, double* ga, double* gb,
                          double* dga, double* dgb, bint deriv) noexcept nogil:
    e[0] = exp(-x)
    if x < SERIES_CUTOFF:
        ga[0] = _horner(GA_C, N_TERMS, x)
        gb[0] = _horner(GB_C, N_TERMS, x)
        if deriv:
            dga[0] = _horner(DGA_C, N_TERMS - 1, x)
            dgb[0] = _horner(DGB_C, N_TERMS - 1, x)
    else:
        ga[0] = (1.0 - (1.0 + x) * e[0]) / (x * x)
        gb[0] = (x - 1.0 + e[0]) / (x * x)
        if deriv:
            dga[0] = (e[0] * (x * x + 2.0 * x + 2.0) - 2.0) / (x * x * x)
            dgb[0] = (2.0 - x - (x + 2.0) * e[0]) / (x * x * x)


def expconv(cp, t, kep, bint with_derivative=False):
    cdef const double[:, ::1] c = np.ascontiguousarray(cp, dtype=np.float64)
    cdef const double[::1] tt = np.ascontiguousarray(t, dtype=np.float64)
    cdef const double[:, ::1] k = np.ascontiguousarray(kep, dtype=np.float64)
    cdef Py_ssize_t nb = c.shape[0], n = c.shape[1], nv = k.shape[1]
    out_arr = np.zeros((nb, nv, n))
    dout_arr = np.zeros((nb, nv, n)) if with_derivative else np.zeros((1, 1, 1))
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, :, ::1] dout = dout_arr
    cdef Py_ssize_t b, v, i
    cdef double dt, x, e, ga, gb, dga, dgb, kk, c0, c1
    with nogil:
        for b in range(nb):
            for v in range(nv):
                kk = k[b, v]
                for i in range(n - 1):
                    dt = tt[i + 1] - tt[i]
                    x = kk * dt
                    _weights(x, &e, &ga, &gb, &dga, &dgb, with_derivative)
                    c0 = c[b, i]
                    c1 = c[b, i + 1]
                    out[b, v, i + 1] = e * out[b, v, i] + dt * (ga * c0 + gb * c1)
                    if with_derivative:
                        dout[b, v, i + 1] = (-dt * e * out[b, v, i] + e * dout[b, v, i]
                                             + dt * dt * (dga * c0 + dgb * c1))
    return out_arr, (dout_arr if with_derivative else None)


def expconv_vjp(cp, t, kep, g):
    cdef const double[:, ::1] c = np.ascontiguousarray(cp, dtype=np.float64)
    cdef const double[::1] tt = np.ascontiguousarray(t, dtype=np.float64)
    cdef const double[:, ::1] k = np.ascontiguousarray(kep, dtype=np.float64)
    cdef const double[:, :, ::1] gg = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t nb = c.shape[0], n = c.shape[1], nv = k.shape[1]
    gcp_arr = np.zeros((nb, n))
    gk_arr = np.zeros((nb, nv))
    cdef double[:, ::1] gcp = gcp_arr
    cdef double[:, ::1] gk = gk_arr
    cdef Py_ssize_t b, v, i
    cdef double dt, e, ga, gb, dga, dgb, kk, f, df, fn, dfn, lam, acc
    with nogil:
        for b in range(nb):
            for v in range(nv):
                kk = k[b, v]
                f = 0.0
                df = 0.0
                acc = 0.0
                for i in range(n - 1):
                    dt = tt[i + 1] - tt[i]
                    _weights(kk * dt, &e, &ga, &gb, &dga, &dgb, True)
                    fn = e * f + dt * (ga * c[b, i] + gb * c[b, i + 1])
                    dfn = -dt * e * f + e * df + dt * dt * (dga * c[b, i] + dgb * c[b, i + 1])
                    f = fn
                    df = dfn
                    acc = acc + gg[b, v, i + 1] * df
                gk[b, v] = acc
                lam = gg[b, v, n - 1]
                for i in range(n - 2, -1, -1):
                    dt = tt[i + 1] - tt[i]
                    _weights(kk * dt, &e, &ga, &gb, &dga, &dgb, False)
                    gcp[b, i] += dt * ga * lam
                    gcp[b, i + 1] += dt * gb * lam
                    lam = gg[b, v, i] + e * lam
    return gcp_arr, gk_arr
