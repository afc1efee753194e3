"""Tracer-kinetic forward models and SPGR signal <-> concentration conversion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import (
    AcqParams,
    AuxMaps,
    DceSeries,
    DegenerateModel,
    NumericalRange,
    OutOfInvertibleRange,
    PkMap,
    PlasmaCurve,
    ShapeMismatch,
    TkModel,
    UnitError,
    VoxelError,
    per_min_to_per_s,
)


@dataclass(frozen=True)
class ConcentrationCurve:
    values_mM: np.ndarray
    time_seconds: np.ndarray

    def __post_init__(self):
        v = np.array(self.values_mM, dtype=np.float64)
        t = np.array(self.time_seconds, dtype=np.float64)
        if v.ndim != 1 or v.shape != t.shape:
            raise ShapeMismatch(f"concentration {v.shape} and times {t.shape} must be equal-length vectors")
        if not np.all(np.isfinite(v)):
            raise UnitError("values_mM", "must be finite")
        if np.any(np.diff(t) <= 0):
            raise UnitError("time_seconds", "must be strictly increasing")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "values_mM", v)
        object.__setattr__(self, "time_seconds", t)

    def __len__(self):
        return self.values_mM.size


def cumulative_integral(values, t):
    """Trapezoidal running integral along the last axis, starting at 0."""
    values = np.asarray(values, dtype=np.float64)
    dt = np.diff(np.asarray(t, dtype=np.float64))
    steps = 0.5 * (values[..., 1:] + values[..., :-1]) * dt
    out = np.zeros_like(values)
    np.cumsum(steps, axis=-1, out=out[..., 1:])
    return out


def _kep(ktrans, ve):
    ktrans = np.asarray(ktrans, dtype=np.float64)
    ve = np.asarray(ve, dtype=np.float64)
    if np.any((ve <= 0) & (ktrans != 0)):
        raise DegenerateModel("ve must be > 0 when ktrans != 0 (kep undefined)")
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ktrans == 0, 0.0, ktrans / np.where(ve > 0, ve, 1.0))


def tissue_concentration(model, cp_values, t, ktrans_per_s, vp, ve=None):
    """Vectorised TK model. Parameters are arrays of shape (V,); returns (V, n)."""
    model = TkModel.parse(model)
    cp_values = np.asarray(cp_values, dtype=np.float64)
    k = np.atleast_1d(np.asarray(ktrans_per_s, dtype=np.float64))
    vp = np.atleast_1d(np.asarray(vp, dtype=np.float64))
    vascular = vp[:, None] * cp_values[None, :]
    if model is TkModel.PATLAK:
        return vascular + k[:, None] * cumulative_integral(cp_values, t)[None, :]
    kep = _kep(k, np.atleast_1d(ve))
    conv, _ = kernels.expconv(cp_values[None, :], t, kep[None, :])
    return vascular + k[:, None] * conv[0]


def etofts_concentration(ktrans_per_s: float, vp: float, ve: float, cp: PlasmaCurve) -> ConcentrationCurve:
    """Extended Tofts tissue curve on the plasma curve's grid.

    The convolution with exp(-kep t) is evaluated exactly for the piecewise
    linear interpolant of ``cp`` (see :mod:`dcepk._kernels_py`).
    """
    if ve == 0 and ktrans_per_s > 0:
        raise DegenerateModel("ve = 0 with ktrans > 0: kep undefined")
    ct = tissue_concentration(TkModel.ETOFTS, cp.values_mM, cp.time_seconds, [ktrans_per_s], [vp], [ve])
    return ConcentrationCurve(ct[0], cp.time_seconds)


def patlak_concentration(ktrans_per_s: float, vp: float, cp: PlasmaCurve) -> ConcentrationCurve:
    ct = tissue_concentration(TkModel.PATLAK, cp.values_mM, cp.time_seconds, [ktrans_per_s], [vp])
    return ConcentrationCurve(ct[0], cp.time_seconds)


def _spgr_constants(t1_seconds, acq: AcqParams):
    t1 = np.asarray(t1_seconds, dtype=np.float64)
    a = acq.tr_seconds / t1
    b = acq.r1_per_mM_per_second * acq.tr_seconds
    cos_a = np.cos(acq.flip_angle_radians)
    return a, b, cos_a


def signal_ratio(ct, t1_seconds, acq: AcqParams):
    """S/S0 for concentrations ``ct`` (..., n) and T1 broadcastable to (...)."""
    a, b, cos_a = _spgr_constants(t1_seconds, acq)
    a = np.asarray(a)[..., None]
    ct = np.asarray(ct, dtype=np.float64)
    one_minus_e = -np.expm1(-a - b * ct)
    denom = (1.0 - cos_a * np.exp(-a - b * ct)) * -np.expm1(-a)
    if np.any(denom == 0) or not np.all(np.isfinite(denom)):
        raise NumericalRange("signal equation denominator underflows (check T1 and TR)")
    return one_minus_e * (1.0 - cos_a * np.exp(-a)) / denom


def signal_ratio_derivative(ct, t1_seconds, acq: AcqParams):
    """d(S/S0)/dCt, positive for all Ct."""
    a, b, cos_a = _spgr_constants(t1_seconds, acq)
    a = np.asarray(a)[..., None]
    e = np.exp(-a - np.asarray(ct, dtype=np.float64) * b)
    k = (1.0 - cos_a * np.exp(-a)) / -np.expm1(-a)
    return k * b * e * (1.0 - cos_a) / (1.0 - cos_a * e) ** 2


def concentration_to_signal(ct, s0, t1_seconds, acq: AcqParams) -> np.ndarray:
    """SPGR signal S(t) for tissue concentration ``ct``.

    ``ct`` may be a :class:`ConcentrationCurve` or an array (..., n) with
    ``s0``/``t1_seconds`` broadcastable to its leading shape.
    """
    values = ct.values_mM if isinstance(ct, ConcentrationCurve) else np.asarray(ct, dtype=np.float64)
    s0 = np.asarray(s0, dtype=np.float64)
    t1 = np.asarray(t1_seconds, dtype=np.float64)
    if np.any(s0 <= 0):
        raise UnitError("s0", "must be > 0")
    if np.any(t1 <= 0):
        raise UnitError("t1_seconds", "must be > 0")
    return s0[..., None] * signal_ratio(values, t1, acq)


def invertible_signal_limit(t1_seconds, acq: AcqParams):
    """Supremum of S/S0 over Ct >= 0 (the saturation value as Ct -> inf)."""
    a, _, cos_a = _spgr_constants(t1_seconds, acq)
    return (1.0 - cos_a * np.exp(-a)) / -np.expm1(-a)


def signal_to_concentration_array(s, s0, t1_seconds, acq: AcqParams):
    """Vectorised inverse of :func:`concentration_to_signal`.

    Returns ``(ct, valid)``; invalid samples (log argument outside (0, 1],
    i.e. S/S0 at or above the saturation limit) hold NaN.
    """
    a, b, cos_a = _spgr_constants(t1_seconds, acq)
    a = np.asarray(a)[..., None]
    s = np.asarray(s, dtype=np.float64)
    s0 = np.asarray(s0, dtype=np.float64)[..., None]
    q = -np.expm1(-a) / (1.0 - cos_a * np.exp(-a))
    rq = (s / s0) * q
    # rq < 1 is exactly the condition for the log argument to lie in (0, 1]
    valid = (rq < 1.0) & np.isfinite(rq)
    # log(arg * e^A) written via log1p; its argument is (r - 1)(e^A - 1) / (r q cos - 1), exactly 0 at S = S0
    with np.errstate(divide="ignore", invalid="ignore"):
        ct = -np.log1p((s / s0 - 1.0) * np.expm1(a) / (rq * cos_a - 1.0)) / b
    ct = np.where(valid, ct, np.nan)
    return ct, valid


def signal_to_concentration(s, s0: float, t1_seconds: float, acq: AcqParams, clamp: bool = False) -> ConcentrationCurve:
    """Invert the SPGR equation for one voxel's signal curve.

    Raises :class:`OutOfInvertibleRange` listing offending frames unless
    ``clamp`` is set, in which case those frames are set to 0.
    """
    if s0 <= 0:
        raise UnitError("s0", "must be > 0")
    if t1_seconds <= 0:
        raise UnitError("t1_seconds", "must be > 0")
    s = np.asarray(s, dtype=np.float64)
    ct, valid = signal_to_concentration_array(s, s0, t1_seconds, acq)
    if not np.all(valid):
        if not clamp:
            raise OutOfInvertibleRange(np.flatnonzero(~valid))
        ct = np.where(valid, ct, 0.0)
    return ConcentrationCurve(ct, acq.time_seconds[: s.size])


def forward_operator(pk: PkMap, cp: PlasmaCurve, aux: AuxMaps, acq: AcqParams) -> DceSeries:
    """S = f_TK(P, Cp): TK model then the signal equation, per masked voxel.

    Unmasked voxels carry their constant S0.
    """
    if pk.shape != aux.shape:
        raise ShapeMismatch(f"PK map {pk.shape} and aux maps {aux.shape} differ")
    if len(cp) != acq.n_frames:
        raise ShapeMismatch(f"plasma curve has {len(cp)} samples, acquisition {acq.n_frames} frames")
    h, w = pk.shape
    background = np.maximum(np.nan_to_num(aux.s0, nan=0.0, posinf=0.0), 0.0)
    out = np.repeat(background[None], acq.n_frames, axis=0)
    idx = np.flatnonzero(aux.mask)
    if idx.size:
        k = per_min_to_per_s(pk.ktrans.ravel()[idx])
        vp = pk.vp.ravel()[idx]
        ve = None if pk.ve is None else pk.ve.ravel()[idx]
        try:
            ct = tissue_concentration(pk.model, cp.values_mM, cp.time_seconds, k, vp, ve)
        except DegenerateModel as exc:
            bad = idx[(ve <= 0) & (k != 0)][0]
            raise VoxelError(np.unravel_index(bad, (h, w)), exc) from exc
        sig = concentration_to_signal(ct, aux.s0.ravel()[idx], aux.t1_seconds.ravel()[idx], acq)
        flat = out.reshape(acq.n_frames, -1)
        flat[:, idx] = sig.T
    return DceSeries(out, acq)
