"""Flat binary parameter archive.

Layout: magic ``RXCK``, u16 format version, u32 JSON metadata block, u32
entry count, then per entry: u16 name length + utf-8 name, u8 dtype code
(0 = float32, 1 = float64), u8 rank, u32 dims, little-endian payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RXCK"
FORMAT_VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR_KIND = {"f4": 0, "f8": 1}


class CheckpointError(ValueError):
    """Raised for malformed or incompatible archives."""


def save_params(path, params: dict, meta: dict | None = None) -> None:
    """Write ``name -> float array`` mappings plus a metadata dict."""
    meta = dict(meta or {})
    meta["format_version"] = FORMAT_VERSION
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.asarray(params[name])
            key = f"f{arr.dtype.itemsize}"
            if key not in _CODE_FOR_KIND or arr.dtype.kind != "f":
                raise CheckpointError(f"unsupported dtype {arr.dtype} for parameter {name!r}")
            code = _CODE_FOR_KIND[key]
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", code, arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes())


def load_params(path) -> tuple[dict, dict]:
    """Read an archive back as ``(params, meta)``."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    try:
        return _decode(raw, path)
    except (struct.error, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt archive: {exc}") from exc


def _decode(raw: bytes, path) -> tuple[dict, dict]:
    off = 4
    (version,) = struct.unpack_from("<H", raw, off)
    off += 2
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (meta_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    meta = json.loads(raw[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        code, ndim = struct.unpack_from("<BB", raw, off)
        off += 2
        if code not in _DTYPE_CODES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name!r}")
        shape = struct.unpack_from(f"<{ndim}I", raw, off) if ndim else ()
        off += 4 * ndim
        dtype = _DTYPE_CODES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        if len(raw) - off < n_bytes:
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        arr = np.frombuffer(raw[off:off + n_bytes], dtype=dtype).reshape(shape)
        off += n_bytes
        params[name] = arr.astype(dtype.newbyteorder("="))
    return params, meta
