"""Named-tensor checkpoint files.

Layout (version 1, all integers little-endian)::

    4 bytes   magic  b"FLNT"
    uint32    format version (1)
    uint64    header length H in bytes
    H bytes   UTF-8 JSON: {"meta": {...}, "tensors": [{"name": str, "shape": [int, ...]}, ...]}
    ...       float64 little-endian values of each tensor, row-major, in header order

``meta`` is free-form (model kind, config, scaler). Header keys are written
sorted so identical contents give identical bytes.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

from floodlab.errors import FormatError

MAGIC = b"FLNT"
VERSION = 1


def save_tensors(stream: BinaryIO, tensors: dict, meta: dict | None = None) -> None:
    entries = [{"name": k, "shape": list(np.shape(v))} for k, v in tensors.items()]
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode("utf-8")
    stream.write(MAGIC)
    stream.write(struct.pack("<IQ", VERSION, len(header)))
    stream.write(header)
    for v in tensors.values():
        stream.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_tensors(stream: BinaryIO) -> tuple[dict, dict]:
    """Return (tensors by name, meta)."""
    if stream.read(4) != MAGIC:
        raise FormatError("not a named-tensor checkpoint (bad magic)")
    raw = stream.read(12)
    if len(raw) != 12:
        raise FormatError("truncated checkpoint header")
    version, hlen = struct.unpack("<IQ", raw)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(stream.read(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"corrupt checkpoint header: {e}") from None
    out = {}
    for ent in header["tensors"]:
        shape = tuple(ent["shape"])
        n = int(np.prod(shape)) if shape else 1
        buf = stream.read(8 * n)
        if len(buf) != 8 * n:
            raise FormatError(f"checkpoint truncated inside tensor {ent['name']!r}")
        out[ent["name"]] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    return out, header["meta"]


def is_checkpoint(path) -> bool:
    with open(path, "rb") as f:
        return f.read(4) == MAGIC
