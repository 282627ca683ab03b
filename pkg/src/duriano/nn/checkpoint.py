"""Named-tensor container with a ``DIAN`` header.

Layout (little-endian)::

    magic "DIAN" | version u32 | n_tensors u32 | meta_len u32 | meta (UTF-8 JSON)
    n_tensors x [name_len u16 | name | ndim u8 | dims u64 * ndim]
    tensor data, float32, row-major, in table order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DIAN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [struct.pack("<4sIII", MAGIC, VERSION, len(tensors), len(meta_bytes)), meta_bytes]
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    for arr in tensors.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, count, meta_len = struct.unpack_from("<4sIII", raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 16
    meta = json.loads(raw[off : off + meta_len].decode("utf-8"))
    off += meta_len
    table = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", raw, off)
        off += 8 * ndim
        table.append((name, shape))
    tensors = {}
    for name, shape in table:
        n = int(np.prod(shape)) if shape else 1
        if off + 4 * n > len(raw):
            raise CheckpointError(f"{path}: truncated data for {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 4 * n
    return tensors, meta
