"""Per-voxel PK estimation: linear least squares and Levenberg-Marquardt.

Parameter vectors inside this module are in internal units: K^trans in
s^-1, v_p and v_e as fractions, ordered as ``TkModel.param_names``.
:class:`FitConfig` bounds and initial guesses are given in reporting units
(K^trans in min^-1) and converted on entry.
"""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .core import (
    AuxMaps,
    ConfigError,
    DceSeries,
    PkMap,
    PlasmaCurve,
    ShapeMismatch,
    SingularDesign,
    TkModel,
    per_min_to_per_s,
    per_s_to_per_min,
)
from .physics import cumulative_integral, signal_to_concentration_array

# per-voxel status bits written to the failure-code raster
OK = 0
FAIL_INVERSION = 1
FAIL_SINGULAR = 2
FLAG_DEGENERATE_KEP = 4
FLAG_CLAMPED = 8
FLAG_NOT_CONVERGED = 16
FAILURE_MASK = FAIL_INVERSION | FAIL_SINGULAR

DEFAULT_BOUNDS = {"ktrans": (0.0, 1.0), "vp": (0.0, 1.0), "ve": (1e-6, 1.0)}
DEFAULT_GUESS = {"ktrans": 0.01, "vp": 0.01, "ve": 0.1}
KEP_TOLERANCE = 1e-9  # s^-1
SINGULAR_RCOND = 1e-10


class FitMethod(str, enum.Enum):
    LLS = "lls"
    NLLS = "nlls"

    @classmethod
    def parse(cls, value) -> "FitMethod":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown fit method {value!r}") from None


@dataclass(frozen=True)
class FitConfig:
    method: FitMethod = FitMethod.LLS
    model: TkModel = TkModel.PATLAK
    max_iterations: int = 200
    gradient_tolerance: float = 1e-10
    relative_tolerance: float = 1e-12
    initial_lambda: float = 1e-3
    parameter_bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    initial_guess: Optional[dict] = None

    def __post_init__(self):
        object.__setattr__(self, "method", FitMethod.parse(self.method))
        object.__setattr__(self, "model", TkModel.parse(self.model))
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be positive")
        if self.gradient_tolerance <= 0 or self.relative_tolerance <= 0:
            raise ConfigError("tolerances must be > 0")
        bounds = dict(DEFAULT_BOUNDS)
        bounds.update({k: tuple(map(float, v)) for k, v in self.parameter_bounds.items()})
        for name, (lo, hi) in bounds.items():
            if lo > hi:
                raise ConfigError(f"bounds for {name}: lo > hi")
        object.__setattr__(self, "parameter_bounds", bounds)

    def internal_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = [], []
        for name in self.model.param_names:
            a, b = self.parameter_bounds[name]
            if name == "ktrans":
                a, b = per_min_to_per_s(a), per_min_to_per_s(b)
            lo.append(a)
            hi.append(b)
        return np.array(lo), np.array(hi)

    def internal_guess(self) -> Optional[np.ndarray]:
        if self.initial_guess is None:
            return None
        return to_internal(self.model, [self.initial_guess[n] for n in self.model.param_names])


def to_internal(model, params_external) -> np.ndarray:
    p = np.array(params_external, dtype=np.float64)
    p[0] = per_min_to_per_s(p[0])
    return p


def to_external(model, params_internal) -> np.ndarray:
    p = np.array(params_internal, dtype=np.float64)
    p[0] = per_s_to_per_min(p[0])
    return p


@dataclass
class FitResult:
    parameters: np.ndarray
    residual_norm: float
    iterations_used: int
    converged: bool
    flags: int = OK
    history: list = field(default_factory=list)

    @property
    def degenerate_kep(self) -> bool:
        return bool(self.flags & FLAG_DEGENERATE_KEP)

    @property
    def clamped(self) -> bool:
        return bool(self.flags & FLAG_CLAMPED)


def _values(curve):
    return curve.values_mM if hasattr(curve, "values_mM") else np.asarray(curve, dtype=np.float64)


def _check_design(x: np.ndarray) -> bool:
    norms = np.linalg.norm(x, axis=0)
    if np.any(norms == 0):
        return False
    s = np.linalg.svd(x / norms, compute_uv=False)
    return s[-1] > SINGULAR_RCOND * s[0]


def _lstsq(x, y):
    norms = np.linalg.norm(x, axis=0)
    theta, *_ = np.linalg.lstsq(x / norms, y, rcond=None)
    return theta / norms


def _clamp(values, lo, hi):
    clamped = np.clip(values, lo, hi)
    return clamped, bool(np.any(clamped != values))


def fit_patlak_lls(ct, cp: PlasmaCurve) -> FitResult:
    """Solve Ct = vp*Cp + K^trans * int(Cp) by least squares.

    Uses the same trapezoid running integral as the Patlak forward model, so
    noiseless data generated by it are recovered to solver precision.
    """
    y = _values(ct)
    c = cp.values_mM
    if y.size != c.size:
        raise ShapeMismatch(f"tissue curve has {y.size} samples, plasma {c.size}")
    if y.size < 3:
        raise SingularDesign("Patlak LLS needs >= 3 frames")
    x = np.column_stack([cumulative_integral(c, cp.time_seconds), c])
    if not _check_design(x):
        raise SingularDesign("Patlak design matrix is rank deficient")
    theta = _lstsq(x, y)
    lo, hi = FitConfig(model=TkModel.PATLAK).internal_bounds()
    params, clamped = _clamp(theta, lo, hi)
    resid = float(np.linalg.norm(x @ params - y))
    return FitResult(params, resid, 0, True, FLAG_CLAMPED if clamped else OK)


def fit_etofts_lls(ct, cp: PlasmaCurve) -> FitResult:
    """Linearised extended Tofts fit.

    Integrating the model ODE gives
    ``Ct = vp*Cp + (K^trans + kep*vp) * int(Cp) - kep * int(Ct)``, linear in
    ``theta = (vp, K^trans + kep*vp, kep)``. When ``int(Ct)`` is collinear with
    the plasma columns (no backflux signal) kep is unidentifiable: the
    Patlak-form solution is returned with ``FLAG_DEGENERATE_KEP`` and ve = NaN.
    """
    y = _values(ct)
    c = cp.values_mM
    t = cp.time_seconds
    if y.size != c.size:
        raise ShapeMismatch(f"tissue curve has {y.size} samples, plasma {c.size}")
    if y.size < 4:
        raise SingularDesign("eTofts LLS needs >= 4 frames")
    icp = cumulative_integral(c, t)
    base = np.column_stack([c, icp])
    if not _check_design(base):
        raise SingularDesign("plasma curve gives a rank-deficient design")
    lo, hi = FitConfig(model=TkModel.ETOFTS).internal_bounds()
    flags = OK
    full = np.column_stack([c, icp, -cumulative_integral(y, t)])
    kep = 0.0
    if _check_design(full):
        vp, theta2, kep = _lstsq(full, y)
    else:
        vp, theta2 = _lstsq(base, y)
    if kep <= KEP_TOLERANCE:
        flags |= FLAG_DEGENERATE_KEP
        ktrans = theta2
        (ktrans, vp), clamped = _clamp(np.array([ktrans, vp]), lo[:2], hi[:2])
        params = np.array([ktrans, vp, np.nan])
        model_ct = vp * c + ktrans * icp
    else:
        ktrans = theta2 - kep * vp
        raw = np.array([ktrans, vp, 0.0])
        raw[:2], clamped = _clamp(raw[:2], lo[:2], hi[:2])
        ve, ve_clamped = _clamp(np.array([raw[0] / kep]), lo[2:], hi[2:])
        raw[2] = ve[0]
        clamped |= ve_clamped
        params = raw
        conv, _ = kernels.expconv(c[None, :], t, np.array([[params[0] / params[2]]]))
        model_ct = params[1] * c + params[0] * conv[0, 0]
    if clamped:
        flags |= FLAG_CLAMPED
    resid = float(np.linalg.norm(model_ct - y))
    return FitResult(params, resid, 0, True, flags)


def model_and_jacobian(model: TkModel, p, cp_values, t):
    """Tissue curve and its Jacobian (n, n_params) at internal parameters ``p``."""
    if model is TkModel.PATLAK:
        icp = cumulative_integral(cp_values, t)
        ktrans, vp = p
        return vp * cp_values + ktrans * icp, np.column_stack([icp, cp_values])
    ktrans, vp, ve = p
    kep = ktrans / ve
    f, df = kernels.expconv(cp_values[None, :], t, np.array([[kep]]), with_derivative=True)
    f = f[0, 0]
    df = df[0, 0]
    ct = vp * cp_values + ktrans * f
    jac = np.column_stack([f + kep * df, cp_values, -kep * kep * df])
    return ct, jac


def _projected_gradient(g, p, lo, hi):
    g = g.copy()
    g[(p <= lo) & (g > 0)] = 0.0
    g[(p >= hi) & (g < 0)] = 0.0
    return g


def levenberg_marquardt(model: TkModel, ct, cp_values, t, p0, lo, hi, cfg: FitConfig) -> FitResult:
    """Box-constrained LM on sum of squared residuals with Marquardt scaling.

    Damping starts at ``cfg.initial_lambda``, x10 on rejected steps and /10 on
    accepted ones; trial points are projected onto the box.
    """
    p = np.clip(np.asarray(p0, dtype=np.float64), lo, hi)
    pred, jac = model_and_jacobian(model, p, cp_values, t)
    r = pred - ct
    cost = float(r @ r)
    history = [cost]
    lam = cfg.initial_lambda
    converged = False
    it = 0
    while it < cfg.max_iterations:
        g = _projected_gradient(jac.T @ r, p, lo, hi)
        if cost == 0.0 or np.max(np.abs(g)) < cfg.gradient_tolerance:
            converged = True
            break
        it += 1
        a = jac.T @ jac
        d = np.diag(a).copy()
        d[d <= 0] = 1.0
        try:
            step = np.linalg.solve(a + lam * np.diag(d), -(jac.T @ r))
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        trial = np.clip(p + step, lo, hi)
        pred_t, jac_t = model_and_jacobian(model, trial, cp_values, t)
        r_t = pred_t - ct
        cost_t = float(r_t @ r_t)
        if cost_t < cost:
            rel = (cost - cost_t) / cost
            p, r, jac, cost = trial, r_t, jac_t, cost_t
            history.append(cost)
            lam = max(lam / 10.0, 1e-15)
            if rel < cfg.relative_tolerance:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e16:
                # no descent direction left inside the box
                converged = True
                break
    flags = OK if converged else FLAG_NOT_CONVERGED
    return FitResult(p, float(np.sqrt(cost)), it, converged, flags, history)


def fit_nlls(ct, cp: PlasmaCurve, cfg: FitConfig) -> FitResult:
    """Levenberg-Marquardt fit of the configured model.

    The starting point is ``cfg.initial_guess`` if set, otherwise the LLS
    estimate; a singular LLS design falls back to the default guess.
    """
    if cfg.method is not FitMethod.NLLS:
        raise ConfigError("fit_nlls requires method = nlls")
    y = _values(ct)
    if y.size != len(cp):
        raise ShapeMismatch(f"tissue curve has {y.size} samples, plasma {len(cp)}")
    model = cfg.model
    lo, hi = cfg.internal_bounds()
    p0 = cfg.internal_guess()
    if p0 is None:
        default = to_internal(model, [DEFAULT_GUESS[n] for n in model.param_names])
        try:
            init = fit_etofts_lls(y, cp) if model is TkModel.ETOFTS else fit_patlak_lls(y, cp)
        except SingularDesign:
            p0 = default
        else:
            p0 = np.where(np.isfinite(init.parameters), init.parameters, default)
    return levenberg_marquardt(model, y, cp.values_mM, cp.time_seconds, p0, lo, hi, cfg)


def fit_curve(ct, cp: PlasmaCurve, cfg: FitConfig) -> FitResult:
    if cfg.method is FitMethod.NLLS:
        return fit_nlls(ct, cp, cfg)
    if cfg.model is TkModel.ETOFTS:
        return fit_etofts_lls(ct, cp)
    return fit_patlak_lls(ct, cp)


@dataclass
class VolumeFit:
    """Fitted map plus sidecar rasters (status bits and residual norms)."""

    pk: PkMap
    codes: np.ndarray
    residual_norm: np.ndarray

    @property
    def n_failed(self) -> int:
        return int(np.count_nonzero(self.codes & FAILURE_MASK))


def _fit_chunk(indices, ct_rows, valid_rows, cp, cfg):
    n_par = cfg.model.n_params
    params = np.zeros((len(indices), n_par))
    codes = np.zeros(len(indices), dtype=np.int32)
    resid = np.zeros(len(indices))
    for j in range(len(indices)):
        if not valid_rows[j]:
            codes[j] = FAIL_INVERSION
            continue
        try:
            res = fit_curve(ct_rows[j], cp, cfg)
        except SingularDesign:
            codes[j] = FAIL_SINGULAR
            continue
        p = res.parameters.copy()
        if n_par == 3 and not np.isfinite(p[2]):
            p[2] = 0.0
        params[j] = to_external(cfg.model, p)
        codes[j] = res.flags
        resid[j] = res.residual_norm
    return params, codes, resid


def fit_volume(series: DceSeries, cp: PlasmaCurve, aux: AuxMaps, cfg: FitConfig, n_workers: int = 1) -> VolumeFit:
    """Convert masked voxels to concentration and fit each one.

    Voxels are independent; ``n_workers`` > 1 splits them across threads and
    gives results identical to the serial run. Unmasked and failed voxels
    hold zeros; failures are recorded in ``codes`` without aborting.
    """
    if series.shape != aux.shape:
        raise ShapeMismatch(f"series {series.shape} and aux maps {aux.shape} differ")
    if len(cp) != series.acq.n_frames:
        raise ShapeMismatch(f"plasma curve has {len(cp)} samples, series {series.acq.n_frames} frames")
    h, w = series.shape
    model = cfg.model
    idx = np.flatnonzero(aux.mask)
    stack = np.zeros((model.n_params, h * w))
    codes = np.zeros(h * w, dtype=np.int32)
    resid = np.zeros(h * w)
    if idx.size:
        s = series.data.reshape(series.acq.n_frames, -1)[:, idx].T
        ct, valid = signal_to_concentration_array(
            s, aux.s0.ravel()[idx], aux.t1_seconds.ravel()[idx], series.acq
        )
        ok = valid.all(axis=1)
        ct = np.where(valid, ct, 0.0)
        n_workers = max(1, int(n_workers))
        bounds = np.linspace(0, idx.size, n_workers + 1).astype(int)
        chunks = [(bounds[i], bounds[i + 1]) for i in range(n_workers)]
        if n_workers == 1:
            parts = [_fit_chunk(idx, ct, ok, cp, cfg)]
        else:
            with ThreadPoolExecutor(n_workers) as pool:
                parts = list(
                    pool.map(lambda ab: _fit_chunk(idx[ab[0] : ab[1]], ct[ab[0] : ab[1]], ok[ab[0] : ab[1]], cp, cfg), chunks)
                )
        params = np.concatenate([p[0] for p in parts])
        stack[:, idx] = params.T
        codes[idx] = np.concatenate([p[1] for p in parts])
        resid[idx] = np.concatenate([p[2] for p in parts])
    lo, hi = cfg.internal_bounds()
    ext_hi = to_external(model, hi)
    # reporting map must satisfy PkMap invariants even for unconstrained LLS output
    stack = np.clip(stack, 0.0, ext_hi[:, None])
    pk = PkMap.from_stack(model, stack.reshape(model.n_params, h, w))
    return VolumeFit(pk, codes.reshape(h, w), resid.reshape(h, w))

