"""Weight checkpoint container.

Layout (all integers little-endian)::

    magic      4 bytes  b"FATW"
    version    u8       1
    meta_len   u32      length of the JSON metadata blob
    meta       bytes    UTF-8 JSON object (model config, stage, lambda, config hash)
    count      u32      number of tensors
    count x:
        name_len u16, name (UTF-8)
        dtype    u8     1 = float32, 2 = float64
        ndim     u8
        dims     ndim x u32
        data     prod(dims) IEEE floats, little-endian, C order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FATW"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict, meta: dict) -> None:
    out = bytearray(MAGIC)
    out += struct.pack("<B", VERSION)
    blob = json.dumps(meta, sort_keys=True).encode()
    out += struct.pack("<I", len(blob)) + blob
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw = name.encode()
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<BB", code, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> tuple:
    """Return ``(tensors, meta)``."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        (version,) = struct.unpack_from("<B", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (mlen,) = struct.unpack_from("<I", buf, 5)
        pos = 9
        meta = json.loads(buf[pos:pos + mlen].decode())
        pos += mlen
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode()
            pos += nlen
            code, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            dims = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            dt = _DTYPES[code]
            n = int(np.prod(dims)) if ndim else 1
            nbytes = n * dt.itemsize
            if pos + nbytes > len(buf):
                raise CheckpointError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(buf, dtype=dt, count=n, offset=pos).reshape(dims).astype(dt.newbyteorder("="))
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    return tensors, meta
