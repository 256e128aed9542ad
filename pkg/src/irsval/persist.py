"""Versioned flat-file container for named numpy arrays plus a JSON header.

Layout::

    magic (8 bytes) | version u32 | header length u64 | header JSON (utf-8)
    | array payloads, little-endian, in header order

The header is written with sorted keys and no whitespace variation, so the
same content always serializes to the same bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DataError

FORMAT_VERSION = 1
_PREFIX = struct.Struct("<IQ")


def dump(path, magic: bytes, meta: dict[str, Any], arrays: dict[str, np.ndarray]) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    specs = []
    payloads = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        specs.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape)})
        payloads.append(le.tobytes())
    header = json.dumps({"meta": meta, "arrays": specs}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(_PREFIX.pack(FORMAT_VERSION, len(header)))
        fh.write(header)
        for blob in payloads:
            fh.write(blob)


def load(path, magic: bytes) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != magic:
        raise DataError(f"{path}: bad magic header (expected {magic!r})")
    version, hlen = _PREFIX.unpack_from(raw, 8)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    start = 8 + _PREFIX.size
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    offset = start + hlen
    arrays = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise DataError(f"{path}: truncated payload for {spec['name']}")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        arrays[spec["name"]] = arr.reshape(spec["shape"]).astype(dtype.newbyteorder("="))
        offset += nbytes
    if offset != len(raw):
        raise DataError(f"{path}: trailing bytes after payload")
    return header["meta"], arrays
