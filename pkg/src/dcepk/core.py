"""Shared domain types, unit handling and error classes.

Internal computation is done in seconds and mM. K^trans is held in
per-minute units only on :class:`PkMap` (the reporting type) and is converted
at the boundaries with :func:`per_min_to_per_s` / :func:`per_s_to_per_min`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SECONDS_PER_MINUTE = 60.0


class DcePkError(Exception):
    """Base class for every error raised by this package."""


class UnitError(DcePkError, ValueError):
    def __init__(self, field_name: str, message: str = ""):
        self.field = field_name
        super().__init__(f"{field_name}: {message}" if message else field_name)


class ShapeMismatch(DcePkError, ValueError):
    pass


class DegenerateModel(DcePkError, ValueError):
    pass


class NumericalRange(DcePkError, ArithmeticError):
    pass


class OutOfInvertibleRange(DcePkError, ValueError):
    def __init__(self, frames, message: str = ""):
        self.frames = tuple(int(f) for f in np.atleast_1d(frames))
        msg = message or f"signal outside invertible range at frame(s) {list(self.frames)}"
        super().__init__(msg)


class SingularDesign(DcePkError, np.linalg.LinAlgError):
    pass


class EmptyCurve(DcePkError, ValueError):
    pass


class ConfigError(DcePkError, ValueError):
    pass


class EmptyMask(DcePkError, ValueError):
    pass


class ImageTooSmall(DcePkError, ValueError):
    pass


class EmptyRegion(DcePkError, ValueError):
    pass


class DatasetTooSmall(DcePkError, ValueError):
    pass


class FrameCountMismatch(DcePkError, ValueError):
    pass


class NonFiniteLoss(DcePkError, ArithmeticError):
    def __init__(self, step: int, message: str = ""):
        self.step = int(step)
        super().__init__(f"non-finite loss at step {self.step}" + (f": {message}" if message else ""))


class VoxelError(DcePkError):
    """A per-voxel failure carrying the voxel coordinates."""

    def __init__(self, coords, cause: Exception):
        self.coords = tuple(int(c) for c in coords)
        self.cause = cause
        super().__init__(f"voxel {self.coords}: {cause}")


class TkModel(str, enum.Enum):
    ETOFTS = "etofts"
    PATLAK = "patlak"

    @classmethod
    def parse(cls, value) -> "TkModel":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "")
        for m in cls:
            if m.value == key:
                return m
        raise ConfigError(f"unknown tracer kinetic model {value!r}")

    @property
    def param_names(self) -> tuple[str, ...]:
        return ("ktrans", "vp", "ve") if self is TkModel.ETOFTS else ("ktrans", "vp")

    @property
    def n_params(self) -> int:
        return len(self.param_names)


def per_min_to_per_s(x):
    return np.asarray(x, dtype=np.float64) / SECONDS_PER_MINUTE if np.ndim(x) else float(x) / SECONDS_PER_MINUTE


def per_s_to_per_min(x):
    return np.asarray(x, dtype=np.float64) * SECONDS_PER_MINUTE if np.ndim(x) else float(x) * SECONDS_PER_MINUTE


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AcqParams:
    tr_seconds: float
    flip_angle_radians: float
    r1_per_mM_per_second: float
    frame_interval_seconds: float
    n_frames: int
    bolus_arrival_frame: int = 0

    def __post_init__(self):
        validate_units(self)

    @property
    def time_seconds(self) -> np.ndarray:
        return np.arange(self.n_frames, dtype=np.float64) * self.frame_interval_seconds

    def to_dict(self) -> dict:
        return {
            "tr_seconds": self.tr_seconds,
            "flip_angle_radians": self.flip_angle_radians,
            "r1_per_mM_per_second": self.r1_per_mM_per_second,
            "frame_interval_seconds": self.frame_interval_seconds,
            "n_frames": self.n_frames,
            "bolus_arrival_frame": self.bolus_arrival_frame,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AcqParams":
        if "flip_angle_degrees" in d and "flip_angle_radians" not in d:
            d = dict(d)
            d["flip_angle_radians"] = math.radians(d.pop("flip_angle_degrees"))
        try:
            return cls(
                tr_seconds=float(d["tr_seconds"]),
                flip_angle_radians=float(d["flip_angle_radians"]),
                r1_per_mM_per_second=float(d["r1_per_mM_per_second"]),
                frame_interval_seconds=float(d["frame_interval_seconds"]),
                n_frames=int(d["n_frames"]),
                bolus_arrival_frame=int(d.get("bolus_arrival_frame", 0)),
            )
        except KeyError as exc:
            raise ConfigError(f"acquisition parameters missing {exc.args[0]!r}") from None


def validate_units(acq: AcqParams) -> AcqParams:
    """Check the acquisition invariants; returns ``acq`` unchanged.

    Raises :class:`UnitError` naming the first violated field.
    """
    def finite(name, v):
        if not isinstance(v, (int, float, np.floating, np.integer)) or not math.isfinite(v):
            raise UnitError(name, "must be a finite number")

    finite("tr", acq.tr_seconds)
    if acq.tr_seconds <= 0:
        raise UnitError("tr", f"must be > 0 s, got {acq.tr_seconds}")
    finite("flip_angle", acq.flip_angle_radians)
    if not 0 < acq.flip_angle_radians < math.pi / 2:
        raise UnitError("flip_angle", f"must lie in (0, pi/2) rad, got {acq.flip_angle_radians}")
    finite("r1", acq.r1_per_mM_per_second)
    if acq.r1_per_mM_per_second <= 0:
        raise UnitError("r1", "must be > 0 /mM/s")
    finite("frame_interval", acq.frame_interval_seconds)
    if acq.frame_interval_seconds <= 0:
        raise UnitError("frame_interval", "must be > 0 s")
    if int(acq.n_frames) != acq.n_frames or acq.n_frames < 2:
        raise UnitError("n_frames", "must be an integer >= 2")
    if int(acq.bolus_arrival_frame) != acq.bolus_arrival_frame or not 0 <= acq.bolus_arrival_frame < acq.n_frames:
        raise UnitError("bolus_arrival_frame", "must satisfy 0 <= frame < n_frames")
    return acq


@dataclass(frozen=True)
class PlasmaCurve:
    values_mM: np.ndarray
    time_seconds: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values_mM)
        t = _frozen(self.time_seconds)
        if v.ndim != 1 or t.shape != v.shape:
            raise ShapeMismatch(f"plasma curve values {v.shape} and times {t.shape} must be equal-length vectors")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise UnitError("values_mM", "must be finite and >= 0")
        if v.size < 2 or np.any(np.diff(t) <= 0):
            raise UnitError("time_seconds", "must be strictly increasing with >= 2 samples")
        object.__setattr__(self, "values_mM", v)
        object.__setattr__(self, "time_seconds", t)

    def __len__(self):
        return self.values_mM.size


@dataclass(frozen=True)
class PkMap:
    """Per-voxel PK parameters. ``ktrans`` is in min^-1; ``vp``/``ve`` are fractions."""

    model: TkModel
    ktrans: np.ndarray
    vp: np.ndarray
    ve: Optional[np.ndarray] = None

    def __post_init__(self):
        model = TkModel.parse(self.model)
        object.__setattr__(self, "model", model)
        k = _frozen(self.ktrans)
        vp = _frozen(self.vp)
        if k.ndim != 2 or vp.shape != k.shape:
            raise ShapeMismatch(f"ktrans {k.shape} and vp {vp.shape} must be equal 2D rasters")
        if (self.ve is not None) != (model is TkModel.ETOFTS):
            raise ShapeMismatch("ve must be present exactly for the eTofts model")
        for name, arr in (("ktrans", k), ("vp", vp)):
            if not np.all(np.isfinite(arr)):
                raise UnitError(name, "must be finite")
        if np.any(k < 0):
            raise UnitError("ktrans", "must be >= 0")
        if np.any((vp < 0) | (vp > 1)):
            raise UnitError("vp", "must lie in [0, 1]")
        object.__setattr__(self, "ktrans", k)
        object.__setattr__(self, "vp", vp)
        if self.ve is not None:
            ve = _frozen(self.ve)
            if ve.shape != k.shape:
                raise ShapeMismatch(f"ve {ve.shape} does not match ktrans {k.shape}")
            if not np.all(np.isfinite(ve)) or np.any((ve < 0) | (ve > 1)):
                raise UnitError("ve", "must lie in [0, 1]")
            object.__setattr__(self, "ve", ve)

    @property
    def height(self) -> int:
        return self.ktrans.shape[0]

    @property
    def width(self) -> int:
        return self.ktrans.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.ktrans.shape

    def as_stack(self) -> np.ndarray:
        """(n_params, H, W) stack in external units."""
        return np.stack([getattr(self, n) for n in self.model.param_names])

    @classmethod
    def from_stack(cls, model, stack) -> "PkMap":
        model = TkModel.parse(model)
        stack = np.asarray(stack, dtype=np.float64)
        if stack.ndim != 3 or stack.shape[0] != model.n_params:
            raise ShapeMismatch(f"expected ({model.n_params}, H, W) stack, got {stack.shape}")
        return cls(model, *stack)

    @classmethod
    def zeros(cls, model, shape) -> "PkMap":
        model = TkModel.parse(model)
        return cls.from_stack(model, np.zeros((model.n_params, *shape)))


@dataclass(frozen=True)
class DceSeries:
    data: np.ndarray
    acq: AcqParams

    def __post_init__(self):
        d = _frozen(self.data)
        if d.ndim != 3:
            raise ShapeMismatch(f"series must be (n_frames, H, W), got {d.shape}")
        if d.shape[0] != self.acq.n_frames:
            raise ShapeMismatch(f"series has {d.shape[0]} frames, acquisition says {self.acq.n_frames}")
        if not np.all(np.isfinite(d)):
            raise UnitError("data", "must be finite")
        if np.any(d < 0):
            raise UnitError("data", "signal intensities must be >= 0")
        object.__setattr__(self, "data", d)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1:]

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class AuxMaps:
    t1_seconds: np.ndarray
    s0: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        t1 = _frozen(self.t1_seconds)
        s0 = _frozen(self.s0)
        mask = np.ones(t1.shape, bool) if self.mask is None else _frozen(self.mask, dtype=bool)
        if t1.ndim != 2 or s0.shape != t1.shape or mask.shape != t1.shape:
            raise ShapeMismatch(f"t1 {t1.shape}, s0 {s0.shape}, mask {mask.shape} must be equal 2D rasters")
        if np.any(~np.isfinite(t1[mask])) or np.any(t1[mask] <= 0):
            raise UnitError("t1_seconds", "must be > 0 inside the mask")
        if np.any(~np.isfinite(s0[mask])) or np.any(s0[mask] <= 0):
            raise UnitError("s0", "must be > 0 inside the mask")
        object.__setattr__(self, "t1_seconds", t1)
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.t1_seconds.shape
