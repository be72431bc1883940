"""Binary checkpoint container for parameter stores.

Layout (all integers little-endian, all floats IEEE-754 binary64 LE):

    magic    4 bytes  b"SRCP"
    version  u32      currently 1
    count    u32      number of entries
    entry * count:
        name_len u16
        name     utf-8 bytes
        step     u64   per-entry Adam step counter
        ndim     u8
        dims     u32 * ndim
        data     f64 * prod(dims)   parameter values
        m        f64 * prod(dims)   Adam first moment
        v        f64 * prod(dims)   Adam second moment

Entries are written in sorted name order so the same store always produces
the same bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .optim import Parameters

MAGIC = b"SRCP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_parameters(params: Parameters, path: str | Path) -> None:
    names = sorted(params.names())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(names)))
        for name in names:
            raw = name.encode("utf-8")
            arr = params.values[name]
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<QB", params.t[name], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8", copy=False).tobytes())
            fh.write(params.m[name].astype("<f8", copy=False).tobytes())
            fh.write(params.v[name].astype("<f8", copy=False).tobytes())


def load_parameters(path: str | Path) -> Parameters:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a parameter checkpoint")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    params = Parameters()
    off = 12
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        step, ndim = struct.unpack_from("<QB", blob, off)
        off += 9
        dims = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        size = int(np.prod(dims)) if ndim else 1
        nbytes = 8 * size

        def take() -> np.ndarray:
            nonlocal off
            arr = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(dims)
            off += nbytes
            return arr.astype(np.float64)

        params.add(name, take())
        params.m[name] = take()
        params.v[name] = take()
        params.t[name] = step
    if off != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after last entry")
    return params
