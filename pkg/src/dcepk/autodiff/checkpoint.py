"""Binary checkpoint container.

Layout: 8-byte magic, u64 little-endian manifest length, UTF-8 JSON manifest,
then each array's raw little-endian bytes in manifest order.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from ..core import DcePkError

MAGIC = b"DCEPKCK1"


class CheckpointError(DcePkError, IOError):
    pass


def save_checkpoint(path, manifest: dict, arrays: dict) -> None:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    head = json.dumps({**manifest, "arrays": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack_from("<Q", raw, 8)
    try:
        manifest = json.loads(raw[16:16 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest") from exc
    offset = 16 + n
    arrays = {}
    for e in manifest.pop("arrays"):
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"], dtype=np.int64))
        end = offset + count * dt.itemsize
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated at {e['name']}")
        arrays[e["name"]] = np.frombuffer(raw, dtype=dt, count=count, offset=offset).reshape(e["shape"]).copy()
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return manifest, arrays
