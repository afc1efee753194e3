"""Volume files, JSON sidecars, AIF CSVs and subject directories.

Volume layout (little-endian)::

    b"DCEV" | u16 version | u8 dtype (0=f32, 1=f64) | u8 ndims | u32 dims[ndims] | C-order payload

Every volume has a sidecar with the same stem and a ``.json`` suffix.
"""
from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

from .core import AcqParams, AuxMaps, DcePkError, DceSeries, PkMap, PlasmaCurve, TkModel

MAGIC = b"DCEV"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
DTYPE_NAMES = {"f32": 0, "f64": 1}


class VolumeError(DcePkError, IOError):
    pass


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def encode_volume(array, dtype: str = "f64") -> bytes:
    code = DTYPE_NAMES[dtype]
    a = np.ascontiguousarray(array, dtype=DTYPES[code])
    if a.ndim > 255:
        raise VolumeError("too many dimensions")
    head = MAGIC + struct.pack("<HBB", VERSION, code, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes()


def decode_volume(raw: bytes, name: str = "<bytes>") -> np.ndarray:
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise VolumeError(f"{name}: not a DCEV volume")
    version, code, ndim = struct.unpack_from("<HBB", raw, 4)
    if version != VERSION:
        raise VolumeError(f"{name}: unsupported version {version}")
    if code not in DTYPES:
        raise VolumeError(f"{name}: unknown dtype code {code}")
    off = 8 + 4 * ndim
    if len(raw) < off:
        raise VolumeError(f"{name}: truncated header")
    dims = struct.unpack_from(f"<{ndim}I", raw, 8)
    dt = DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) != off + count * dt.itemsize:
        raise VolumeError(f"{name}: payload is {len(raw) - off} bytes, header implies {count * dt.itemsize}")
    return np.frombuffer(raw, dtype=dt, count=count, offset=off).reshape(dims).copy()


def write_volume(path, array, dtype: str = "f64", meta: dict | None = None) -> None:
    path = Path(path)
    arr = np.asarray(array)
    path.write_bytes(encode_volume(arr, dtype))
    side = {"dims": list(arr.shape), "dtype": dtype, **(meta or {})}
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def read_volume(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise VolumeError(f"{path}: {exc.strerror or exc}") from None
    arr = decode_volume(raw, str(path))
    side = sidecar_path(path)
    meta = {}
    if side.exists():
        try:
            meta = json.loads(side.read_text())
        except json.JSONDecodeError as exc:
            raise VolumeError(f"{side}: {exc}") from None
        if list(meta.get("dims", arr.shape)) != list(arr.shape):
            raise VolumeError(f"{side}: dims {meta.get('dims')} disagree with volume {list(arr.shape)}")
    return arr, meta


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise VolumeError(f"{path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise VolumeError(f"{path}: invalid JSON ({exc})") from None


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# AIF curves ---------------------------------------------------------------------

def aif_csv_text(curve: PlasmaCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_seconds", "cp_mM"])
    for t, c in zip(curve.time_seconds, curve.values_mM):
        w.writerow([repr(float(t)), repr(float(c))])
    return buf.getvalue()


def write_aif_csv(path, curve: PlasmaCurve) -> None:
    Path(path).write_text(aif_csv_text(curve))


def read_aif_csv(path) -> PlasmaCurve:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise VolumeError(f"{path}: {exc.strerror or exc}") from None
    try:
        t = [float(r["time_seconds"]) for r in rows]
        c = [float(r["cp_mM"]) for r in rows]
    except (KeyError, ValueError, TypeError) as exc:
        raise VolumeError(f"{path}: expected columns time_seconds,cp_mM ({exc})") from None
    return PlasmaCurve(np.array(c), np.array(t))


# typed volumes --------------------------------------------------------------------

def write_series(path, series: DceSeries, dtype: str = "f64") -> None:
    write_volume(path, series.data, dtype, {"kind": "series", "units": "a.u.", "acq": series.acq.to_dict()})


def read_series(path) -> DceSeries:
    arr, meta = read_volume(path)
    if "acq" not in meta:
        raise VolumeError(f"{sidecar_path(path)}: series sidecar lacks acquisition parameters")
    return DceSeries(arr.astype(np.float64), AcqParams.from_dict(meta["acq"]))


def write_pk(path, pk: PkMap, dtype: str = "f64", extra: dict | None = None) -> None:
    meta = {"kind": "pk", "model": pk.model.value, "parameters": list(pk.model.param_names),
            "units": {"ktrans": "1/min", "vp": "fraction", "ve": "fraction"}, **(extra or {})}
    write_volume(path, pk.as_stack(), dtype, meta)


def read_pk(path) -> PkMap:
    arr, meta = read_volume(path)
    if "model" not in meta:
        raise VolumeError(f"{sidecar_path(path)}: PK sidecar lacks the model")
    return PkMap.from_stack(TkModel.parse(meta["model"]), arr.astype(np.float64))


def read_raster(path) -> np.ndarray:
    arr, _ = read_volume(path)
    if arr.ndim != 2:
        raise VolumeError(f"{path}: expected a 2-D raster, got {arr.shape}")
    return arr.astype(np.float64)


SUBJECT_FILES = {
    "series": "series.dcev", "pk": "pk.dcev", "t1": "t1.dcev", "s0": "s0.dcev",
    "mask": "mask.dcev", "labels": "labels.dcev", "aif": "aif.csv", "meta": "meta.json",
}


def write_subject(out_dir, phantom) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_series(out / SUBJECT_FILES["series"], phantom.series)
    write_pk(out / SUBJECT_FILES["pk"], phantom.pk)
    write_volume(out / SUBJECT_FILES["t1"], phantom.aux.t1_seconds, meta={"kind": "t1", "units": "s"})
    write_volume(out / SUBJECT_FILES["s0"], phantom.aux.s0, meta={"kind": "s0", "units": "a.u."})
    write_volume(out / SUBJECT_FILES["mask"], phantom.aux.mask.astype(np.float64), meta={"kind": "mask"})
    write_volume(out / SUBJECT_FILES["labels"], phantom.labels.astype(np.float64), meta={"kind": "labels"})
    write_aif_csv(out / SUBJECT_FILES["aif"], phantom.cp)
    write_json(out / SUBJECT_FILES["meta"], {"phantom_config": phantom.config.to_dict()})


def read_aux(t1_path, s0_path, mask_path=None) -> AuxMaps:
    t1 = read_raster(t1_path)
    s0 = read_raster(s0_path)
    mask = read_raster(mask_path) > 0.5 if mask_path is not None else None
    return AuxMaps(t1, s0, mask)


def subject_dirs(data_dir) -> list[Path]:
    """``data_dir`` itself if it holds a series, else its sorted subdirectories that do."""
    root = Path(data_dir)
    if not root.is_dir():
        raise VolumeError(f"{root}: not a directory")
    if (root / SUBJECT_FILES["series"]).exists():
        return [root]
    subs = sorted(p for p in root.iterdir() if (p / SUBJECT_FILES["series"]).exists())
    if not subs:
        raise VolumeError(f"{root}: no subject directories with {SUBJECT_FILES['series']}")
    return subs
