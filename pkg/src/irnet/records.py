"""Length-prefixed binary tensor records, shared by checkpoints and the
patch cache.

Record layout (all integers u32 little-endian):
    name_len, name (utf-8), rank, dims[rank], raw float32 data (LE)
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointError

_U32 = struct.Struct("<I")


def write_u32(fh, value: int):
    fh.write(_U32.pack(value))


def read_u32(fh, what="u32") -> int:
    raw = fh.read(4)
    if len(raw) != 4:
        raise CheckpointError(f"truncated file while reading {what}")
    return _U32.unpack(raw)[0]


def write_bytes(fh, data: bytes):
    write_u32(fh, len(data))
    fh.write(data)


def read_bytes(fh, what="bytes") -> bytes:
    n = read_u32(fh, what=f"length of {what}")
    raw = fh.read(n)
    if len(raw) != n:
        raise CheckpointError(f"truncated file while reading {what}")
    return raw


def write_tensor_record(fh, name: str, arr: np.ndarray):
    write_bytes(fh, name.encode("utf-8"))
    write_u32(fh, arr.ndim)
    for d in arr.shape:
        write_u32(fh, d)
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor_record(fh):
    name = read_bytes(fh, what="record name").decode("utf-8")
    rank = read_u32(fh, what=f"rank of {name}")
    if rank > 8:
        raise CheckpointError(f"implausible rank {rank} for record {name}")
    dims = tuple(read_u32(fh, what=f"dim of {name}") for _ in range(rank))
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise CheckpointError(f"truncated data for record {name}")
    arr = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
    return name, arr
