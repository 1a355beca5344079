"""Binary checkpoint format.

Layout: magic "NVGN", u32 version, u32 meta length + meta JSON, u32 record
count, then per tensor a sized name, shape, and raw float64 bytes; the file
ends with a sha256 checksum of everything before it. Loading verifies
magic, version, and checksum with distinct errors and returns params,
optimizer state, and meta bitwise-identical to what was saved.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatVersionError, MagicError, ParseError

MAGIC = b"NVGN"
VERSION = 1


def save_checkpoint(path, params: dict, opt_state: dict, meta: dict):
    meta = dict(meta)
    meta["adam_t"] = opt_state.get("t", 0)
    records = []
    for name in sorted(params):
        records.append((f"p.{name}", params[name]))
    for name in sorted(opt_state.get("m", {})):
        records.append((f"m.{name}", opt_state["m"][name]))
    for name in sorted(opt_state.get("v", {})):
        records.append((f"v.{name}", opt_state["v"][name]))

    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf += struct.pack("<I", len(meta_bytes))
    buf += meta_bytes
    buf += struct.pack("<I", len(records))
    for name, arr in records:
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        nb = name.encode("utf-8")
        buf += struct.pack("<H", len(nb))
        buf += nb
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
        buf += arr.tobytes()
    buf += hashlib.sha256(bytes(buf)).digest()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise MagicError(MAGIC, bytes(data[:4]))
    if len(data) < 8:
        raise ChecksumError("file truncated before version field")
    version = struct.unpack_from("<I", data, 4)[0]
    if version != VERSION:
        raise FormatVersionError(VERSION, version)
    if len(data) < 40 or hashlib.sha256(data[:-32]).digest() != data[-32:]:
        raise ChecksumError()
    body = memoryview(data)[8:-32]
    off = 0

    def take(n):
        nonlocal off
        chunk = body[off:off + n]
        if len(chunk) != n:
            raise ParseError("checkpoint body shorter than declared records")
        off += n
        return chunk

    meta_len = struct.unpack("<I", take(4))[0]
    meta = json.loads(bytes(take(meta_len)).decode("utf-8"))
    count = struct.unpack("<I", take(4))[0]
    params, m_state, v_state = {}, {}, {}
    for _ in range(count):
        name_len = struct.unpack("<H", take(2))[0]
        name = bytes(take(name_len)).decode("utf-8")
        ndim = struct.unpack("<B", take(1))[0]
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim)) if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(8 * size), dtype=np.float64).reshape(shape).copy()
        prefix, key = name.split(".", 1)
        {"p": params, "m": m_state, "v": v_state}[prefix][key] = arr
    opt_state = {"m": m_state, "v": v_state, "t": meta.get("adam_t", 0)}
    return params, opt_state, meta
