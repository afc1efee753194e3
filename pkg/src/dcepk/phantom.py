"""Digital DCE phantom: elliptical PK regions -> physics -> signal series."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .aif import DEFAULT_HEMATOCRIT, AifParams, default_aif_params, plasma_curve
from .core import AcqParams, AuxMaps, ConfigError, DceSeries, PkMap, PlasmaCurve, TkModel
from .fitting import DEFAULT_BOUNDS
from .physics import forward_operator

TUMOR_ACQ = AcqParams(
    tr_seconds=2.80e-3,
    flip_angle_radians=math.radians(10.0),
    r1_per_mM_per_second=3.47,
    frame_interval_seconds=6.5,
    n_frames=65,
    bolus_arrival_frame=4,
)
MCI_ACQ = AcqParams(
    tr_seconds=3.72e-3,
    flip_angle_radians=math.radians(10.0),
    r1_per_mM_per_second=3.47,
    frame_interval_seconds=10.0,
    n_frames=60,
    bolus_arrival_frame=4,
)

# lesion ranges centred on tumour-region magnitudes (K^trans in min^-1)
LESION_RANGES = {"ktrans": (0.010, 0.016), "vp": (0.0035, 0.0055), "ve": (0.035, 0.050)}
TISSUE_RANGES = {"ktrans": (0.001, 0.003), "vp": (0.008, 0.015), "ve": (0.020, 0.040)}

AIR_S0 = 0.05
AIR_T1 = 1.0


@dataclass(frozen=True)
class PhantomConfig:
    width: int = 64
    height: int = 64
    model: TkModel = TkModel.ETOFTS
    n_regions: int = 4
    parameter_ranges: dict = field(default_factory=lambda: dict(LESION_RANGES))
    background_ranges: dict = field(default_factory=lambda: dict(TISSUE_RANGES))
    t1_range_seconds: tuple = (1.0, 1.2)
    s0_range: tuple = (0.8, 1.2)
    acq: AcqParams = TUMOR_ACQ
    aif: AifParams = field(default_factory=default_aif_params)
    hct: float = DEFAULT_HEMATOCRIT
    noise_sigma: float = 0.0
    seed: int = 0
    ramp_amplitude: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "model", TkModel.parse(self.model))
        if self.width < 8 or self.height < 8:
            raise ConfigError("phantom must be at least 8x8")
        if self.n_regions < 1:
            raise ConfigError("n_regions must be positive")
        if not 0 <= self.ramp_amplitude < 1:
            raise ConfigError("ramp_amplitude must lie in [0, 1)")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if not 0 <= self.hct < 1:
            raise ConfigError("hct must lie in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        for label, ranges in (("parameter_ranges", self.parameter_ranges), ("background_ranges", self.background_ranges)):
            for name in self.model.param_names:
                if name not in ranges:
                    raise ConfigError(f"{label} missing {name}")
                lo, hi = ranges[name]
                blo, bhi = DEFAULT_BOUNDS[name]
                # the spatial ramp scales values by up to (1 +/- ramp_amplitude)
                if lo > hi or lo * (1 - self.ramp_amplitude) < blo or hi * (1 + self.ramp_amplitude) > bhi:
                    raise ConfigError(f"{label}[{name}] = {ranges[name]} infeasible within fit bounds {DEFAULT_BOUNDS[name]}")
        for label, (lo, hi) in (("t1_range_seconds", self.t1_range_seconds), ("s0_range", self.s0_range)):
            if not 0 < lo <= hi:
                raise ConfigError(f"{label} must be a positive interval")

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "model": self.model.value,
            "n_regions": self.n_regions,
            "parameter_ranges": {k: list(v) for k, v in self.parameter_ranges.items()},
            "background_ranges": {k: list(v) for k, v in self.background_ranges.items()},
            "t1_range_seconds": list(self.t1_range_seconds),
            "s0_range": list(self.s0_range),
            "acq": self.acq.to_dict(),
            "aif": self.aif.to_dict(),
            "hct": self.hct,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "ramp_amplitude": self.ramp_amplitude,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown phantom config keys: {sorted(unknown)}")
        kw = dict(d)
        if "acq" in kw:
            kw["acq"] = AcqParams.from_dict(kw["acq"])
        if "aif" in kw:
            kw["aif"] = AifParams.from_dict(kw["aif"])
        for key in ("parameter_ranges", "background_ranges"):
            if key in kw:
                kw[key] = {k: tuple(v) for k, v in kw[key].items()}
        for key in ("t1_range_seconds", "s0_range"):
            if key in kw:
                kw[key] = tuple(kw[key])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class Phantom:
    pk: PkMap
    aux: AuxMaps
    cp: PlasmaCurve
    series: DceSeries
    labels: np.ndarray
    config: PhantomConfig


def _ellipse(yy, xx, cy, cx, ay, ax, theta):
    c, s = math.cos(theta), math.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / ax) ** 2 + (v / ay) ** 2 <= 1.0


def _layout(cfg: PhantomConfig, rng: np.random.Generator) -> np.ndarray:
    h, w = cfg.height, cfg.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    labels = np.zeros((h, w), dtype=np.int32)
    head = _ellipse(yy, xx, (h - 1) / 2, (w - 1) / 2, 0.46 * h, 0.46 * w, 0.0)
    labels[head] = 1
    for region in range(2, cfg.n_regions + 1):
        for _ in range(200):
            ay = rng.uniform(0.07, 0.14) * h
            ax = rng.uniform(0.07, 0.14) * w
            cy = (h - 1) / 2 + rng.uniform(-0.26, 0.26) * h
            cx = (w - 1) / 2 + rng.uniform(-0.26, 0.26) * w
            theta = rng.uniform(0, math.pi)
            blob = _ellipse(yy, xx, cy, cx, ay, ax, theta)
            if blob.any() and np.all(labels[blob] == 1):
                labels[blob] = region
                break
        else:
            raise ConfigError(f"could not place {cfg.n_regions - 1} non-overlapping lesions in {h}x{w}")
    return labels


def _ramp(shape, rng: np.random.Generator) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    theta = rng.uniform(0, 2 * math.pi)
    s = ((xx - (w - 1) / 2) * math.cos(theta) + (yy - (h - 1) / 2) * math.sin(theta)) / (0.5 * math.hypot(h, w))
    return s


def generate_phantom(cfg: PhantomConfig) -> Phantom:
    """Deterministic phantom for ``cfg.seed``.

    Region 1 is background tissue (``background_ranges``); regions 2.. are
    lesions drawn from ``parameter_ranges``. Each region gets uniform
    parameter draws modulated by a linear ramp of +/- ``ramp_amplitude``, and
    constant T1 and S0.
    """
    geo_seq, par_seq, noise_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    labels = _layout(cfg, np.random.default_rng(geo_seq))
    rng = np.random.default_rng(par_seq)
    shape = labels.shape
    mask = labels > 0
    names = cfg.model.param_names
    stack = np.zeros((len(names), *shape))
    t1 = np.full(shape, AIR_T1)
    s0 = np.full(shape, AIR_S0)
    for region in range(1, cfg.n_regions + 1):
        sel = labels == region
        ranges = cfg.background_ranges if region == 1 else cfg.parameter_ranges
        for i, name in enumerate(names):
            lo, hi = ranges[name]
            value = rng.uniform(lo, hi)
            ramp = _ramp(shape, rng)
            blo, bhi = DEFAULT_BOUNDS[name]
            stack[i][sel] = np.clip(value * (1.0 + cfg.ramp_amplitude * ramp[sel]), blo, bhi)
        t1[sel] = rng.uniform(*cfg.t1_range_seconds)
        s0[sel] = rng.uniform(*cfg.s0_range)
    pk = PkMap.from_stack(cfg.model, stack)
    aux = AuxMaps(t1, s0, mask)
    cp = plasma_curve(cfg.acq, cfg.aif, cfg.hct)
    series = forward_operator(pk, cp, aux, cfg.acq)
    if cfg.noise_sigma > 0:
        sigma = cfg.noise_sigma * float(s0[mask].mean())
        series = add_noise(series, sigma, np.random.default_rng(noise_seq))
    return Phantom(pk, aux, cp, series, labels, cfg)


def add_noise(series: DceSeries, sigma: float, seed) -> DceSeries:
    """Add i.i.d. N(0, sigma^2) noise, clamped at 0. ``sigma == 0`` returns ``series``."""
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    if sigma == 0:
        return series
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noisy = series.data + rng.normal(0.0, sigma, size=series.data.shape)
    return DceSeries(np.maximum(noisy, 0.0), series.acq)


def jitter_aif(params: AifParams, rng: np.random.Generator, amount: float) -> AifParams:
    """Scale each shape parameter of ``params`` by an independent factor in 1 +/- amount."""
    fields = ("peak_amplitude_mM", "bolus_width_seconds", "recirculation_amplitude_mM", "washout_rate_per_s", "tail_amplitude_mM")
    return params.replace(**{f: getattr(params, f) * rng.uniform(1 - amount, 1 + amount) for f in fields})


def generate_phantom_set(cfg: PhantomConfig, n: int, aif_jitter: float = 0.2) -> list[Phantom]:
    """``n`` subjects with independent layouts, parameters and AIFs, all derived from ``cfg.seed``."""
    if n < 1:
        raise ConfigError("need at least one phantom")
    seqs = np.random.SeedSequence(cfg.seed).spawn(n)
    out = []
    for seq in seqs:
        rng = np.random.default_rng(seq)
        sub_seed = int(rng.integers(0, 2**63))
        aif = jitter_aif(cfg.aif, rng, aif_jitter) if aif_jitter > 0 else cfg.aif
        out.append(generate_phantom(replace(cfg, seed=sub_seed, aif=aif)))
    return out
