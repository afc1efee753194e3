"""PSNR, SSIM, curve NRMSE and per-region parameter means."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import EmptyMask, EmptyRegion, ImageTooSmall, PkMap, ShapeMismatch

SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius 5 -> 11x11 window
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
# errors below this fraction of the data range are floating-point round-off
ROUNDOFF_RTOL = 1e-10


def _pair(pred, reference, mask):
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"prediction {a.shape} vs reference {b.shape}")
    if mask is None:
        m = np.ones(a.shape, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.shape != a.shape:
            raise ShapeMismatch(f"mask {m.shape} vs image {a.shape}")
    if not m.any():
        raise EmptyMask("mask selects no voxels")
    return a, b, m


def default_data_range(reference, mask=None) -> float:
    """The reference's maximum over the mask."""
    ref = np.asarray(reference, dtype=np.float64)
    m = np.ones(ref.shape, bool) if mask is None else np.asarray(mask, bool)
    if not m.any():
        raise EmptyMask("mask selects no voxels")
    return float(ref[m].max())


def psnr(pred, reference, data_range: float | None = None, mask=None) -> float:
    """10 log10(range^2 / MSE) over the mask; ``inf`` when the error is at round-off level."""
    a, b, m = _pair(pred, reference, mask)
    rng = default_data_range(b, m) if data_range is None else float(data_range)
    if not rng > 0:
        raise ValueError(f"data_range must be > 0, got {rng}")
    mse = float(np.mean((a[m] - b[m]) ** 2))
    if mse <= (ROUNDOFF_RTOL * rng) ** 2:
        return math.inf
    return 10.0 * math.log10(rng * rng / mse)


def ssim_map(pred, reference, data_range: float) -> np.ndarray:
    """Local SSIM with an 11x11 Gaussian window (sigma 1.5) and population statistics."""
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"prediction {a.shape} vs reference {b.shape}")
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ImageTooSmall(f"SSIM needs 2-D images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")

    def f(x):
        return gaussian_filter(x, SSIM_SIGMA, mode="reflect", truncate=SSIM_TRUNCATE)

    ux, uy = f(a), f(b)
    vx = f(a * a) - ux * ux
    vy = f(b * b) - uy * uy
    vxy = f(a * b) - ux * uy
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    return ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))


def ssim(pred, reference, data_range: float | None = None, mask=None) -> float:
    """Mean local SSIM over the mask, ignoring the 5-pixel border the window cannot fill."""
    a, b, m = _pair(pred, reference, mask)
    rng = default_data_range(b, m) if data_range is None else float(data_range)
    if not rng > 0:
        raise ValueError(f"data_range must be > 0, got {rng}")
    smap = ssim_map(a, b, rng)
    pad = (SSIM_WINDOW - 1) // 2
    inner = np.zeros_like(m)
    inner[pad:-pad, pad:-pad] = True
    sel = m & inner
    if not sel.any():
        raise EmptyMask("mask has no voxels away from the image border")
    return float(smap[sel].mean())


def nrmse(pred, reference) -> float:
    """RMSE normalised by the reference's range (max - min)."""
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"prediction {a.shape} vs reference {b.shape}")
    span = float(b.max() - b.min())
    if span <= 0:
        raise ValueError("reference curve is constant; NRMSE undefined")
    return float(np.sqrt(np.mean((a - b) ** 2)) / span)


@dataclass(frozen=True)
class RegionSpec:
    label_raster: np.ndarray
    region_ids: frozenset

    def __post_init__(self):
        labels = np.asarray(self.label_raster)
        if labels.ndim != 2:
            raise ShapeMismatch("label raster must be 2-D")
        object.__setattr__(self, "label_raster", labels.astype(np.int64))
        object.__setattr__(self, "region_ids", frozenset(int(r) for r in self.region_ids))

    @classmethod
    def from_labels(cls, labels, background: int = 0) -> "RegionSpec":
        labels = np.asarray(labels).astype(np.int64)
        return cls(labels, frozenset(int(v) for v in np.unique(labels) if v != background))


def region_stats(pk: PkMap, regions: RegionSpec) -> dict:
    """{region_id: {parameter: mean}} in external units (K^trans in min^-1)."""
    if regions.label_raster.shape != pk.shape:
        raise ShapeMismatch(f"labels {regions.label_raster.shape} vs map {pk.shape}")
    out = {}
    stack = pk.as_stack()
    for rid in sorted(regions.region_ids):
        sel = regions.label_raster == rid
        if not sel.any():
            raise EmptyRegion(f"region {rid} has no voxels")
        out[rid] = {name: float(stack[i][sel].mean()) for i, name in enumerate(pk.model.param_names)}
    return out


REPORT_FIELDS = ("parameter", "metric", "value", "region_id")


def format_value(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def evaluate_maps(pred: PkMap, reference: PkMap, mask=None, regions: RegionSpec | None = None) -> list[dict]:
    """Per-parameter PSNR/SSIM/MAE rows, then region means of both maps."""
    if pred.model is not reference.model:
        raise ShapeMismatch(f"model {pred.model.value} vs {reference.model.value}")
    rows = []
    ps, rs = pred.as_stack(), reference.as_stack()
    m = np.ones(reference.shape, bool) if mask is None else np.asarray(mask, bool)
    for i, name in enumerate(reference.model.param_names):
        rng = default_data_range(rs[i], m)
        rows.append({"parameter": name, "metric": "psnr", "value": psnr(ps[i], rs[i], rng, m), "region_id": ""})
        rows.append({"parameter": name, "metric": "ssim", "value": ssim(ps[i], rs[i], rng, m), "region_id": ""})
        rows.append({"parameter": name, "metric": "mae", "value": float(np.mean(np.abs(ps[i] - rs[i])[m])),
                     "region_id": ""})
    if regions is not None:
        for label, pk in (("mean_pred", pred), ("mean_ref", reference)):
            for rid, means in region_stats(pk, regions).items():
                for name, v in means.items():
                    rows.append({"parameter": name, "metric": label, "value": v, "region_id": rid})
    return rows


def report_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "value": format_value(r["value"])})
    return buf.getvalue()
