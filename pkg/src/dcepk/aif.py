"""Population arterial input function, hematocrit correction and AIF features."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from importlib import resources
from typing import NamedTuple

import numpy as np

from .core import AcqParams, ConfigError, EmptyCurve, PlasmaCurve, UnitError

DEFAULT_HEMATOCRIT = 0.45


@dataclass(frozen=True)
class AifParams:
    bolus_arrival_seconds: float
    peak_amplitude_mM: float
    bolus_width_seconds: float
    recirculation_amplitude_mM: float
    washout_rate_per_s: float
    tail_amplitude_mM: float
    tail_rate_per_s: float

    def __post_init__(self):
        for name in ("bolus_arrival_seconds", "recirculation_amplitude_mM", "tail_amplitude_mM"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise UnitError(name, "must be finite and >= 0")
        for name in ("peak_amplitude_mM", "bolus_width_seconds", "washout_rate_per_s", "tail_rate_per_s"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise UnitError(name, "must be finite and > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AifParams":
        try:
            return cls(**{k: float(d[k]) for k in cls.__dataclass_fields__})
        except KeyError as exc:
            raise ConfigError(f"AIF parameters missing {exc.args[0]!r}") from None

    def replace(self, **changes) -> "AifParams":
        d = self.to_dict()
        d.update(changes)
        return AifParams(**d)


class BloodCurve(PlasmaCurve):
    """Whole-blood concentration curve C_b(t); same invariants as a plasma curve."""


class AifFeatures(NamedTuple):
    first_moment_seconds: float
    peak_enhancement_mM: float
    auc_mM_seconds: float


def load_default_config() -> dict:
    text = resources.files("dcepk").joinpath("data/aif_default.json").read_text()
    return json.loads(text)


def default_aif_params() -> AifParams:
    return AifParams.from_dict(load_default_config()["params"])


def population_aif(params: AifParams, grid) -> BloodCurve:
    """Gamma-variate bolus plus recirculation and tail, zero before arrival.

    With u = t - arrival and w = bolus width::

        Cb = peak * (u/w)^2 * exp(2 (1 - u/w))
             + recirc * exp(-washout * u) * (1 - exp(-u/w))
             + tail * exp(-tail_rate * u) * (1 - exp(-u/w))
    """
    t = np.asarray(grid, dtype=np.float64)
    if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
        raise UnitError("grid", "must be a strictly increasing vector")
    u = t - params.bolus_arrival_seconds
    after = u >= 0
    u = np.where(after, u, 0.0)
    r = u / params.bolus_width_seconds
    rise = -np.expm1(-r)
    cb = (
        params.peak_amplitude_mM * r**2 * np.exp(2.0 * (1.0 - r))
        + params.recirculation_amplitude_mM * np.exp(-params.washout_rate_per_s * u) * rise
        + params.tail_amplitude_mM * np.exp(-params.tail_rate_per_s * u) * rise
    )
    return BloodCurve(np.where(after, cb, 0.0), t)


def blood_to_plasma(cb: PlasmaCurve, hct: float = DEFAULT_HEMATOCRIT) -> PlasmaCurve:
    """Cp = Cb / (1 - Hct)."""
    if not 0 <= hct < 1:
        raise UnitError("hct", f"hematocrit must lie in [0, 1), got {hct}")
    return PlasmaCurve(cb.values_mM / (1.0 - hct), cb.time_seconds)


def plasma_curve(acq: AcqParams, params: AifParams | None = None, hct: float = DEFAULT_HEMATOCRIT) -> PlasmaCurve:
    """Plasma curve on the acquisition grid; frames before the bolus frame are 0."""
    params = params or default_aif_params()
    cp = blood_to_plasma(population_aif(params, acq.time_seconds), hct).values_mM.copy()
    cp[: acq.bolus_arrival_frame] = 0.0
    return PlasmaCurve(cp, acq.time_seconds)


def aif_quality_features(curve: PlasmaCurve) -> AifFeatures:
    """First moment, peak enhancement and trapezoidal area of a curve."""
    c = curve.values_mM
    t = curve.time_seconds
    total = c.sum()
    if total == 0:
        raise EmptyCurve("first moment undefined for an all-zero curve")
    first_moment = float(np.dot(t, c) / total)
    auc = float(np.sum(0.5 * (c[1:] + c[:-1]) * np.diff(t)))
    return AifFeatures(first_moment, float(c.max()), auc)
