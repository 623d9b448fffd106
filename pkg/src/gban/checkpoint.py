"""Binary checkpoint format.

Layout (all integers u32 little-endian)::

    magic b"GBANCKPT" | version | count
    count x ( name_len | name utf-8 | rank | dims[rank] | f64 LE payload )
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"GBANCKPT"
VERSION = 1
_U32 = struct.Struct("<I")


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype=np.float64)
        parts += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        parts += [_U32.pack(d) for d in arr.shape]
        parts.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)

    def u32() -> int:
        nonlocal pos
        if pos + 4 > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        (v,) = _U32.unpack_from(blob, pos)
        pos += 4
        return v

    version = u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, this build reads version {VERSION}")
    arrays = {}
    for _ in range(u32()):
        n = u32()
        name = blob[pos:pos + n].decode("utf-8")
        pos += n
        shape = tuple(u32() for _ in range(u32()))
        size = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + size > len(blob):
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=size // 8, offset=pos).reshape(shape).copy()
        pos += size
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    return arrays


def assign_parameters(params: dict, arrays: dict[str, np.ndarray], source="checkpoint") -> None:
    """Copy ``arrays`` into the matching parameter tensors, checking names and shapes first."""
    missing = sorted(set(params) - set(arrays))
    if missing:
        raise CheckpointError(f"{source} (format v{VERSION}) lacks parameters {missing}")
    for name, p in params.items():
        if arrays[name].shape != p.shape:
            raise CheckpointError(
                f"{source} (format v{VERSION}): {name} has shape {arrays[name].shape}, model expects {p.shape}")
    for name, p in params.items():
        p.data = arrays[name].copy()
