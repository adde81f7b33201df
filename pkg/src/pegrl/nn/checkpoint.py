"""Versioned binary checkpoint of named parameter blocks.

Layout (little-endian):
    magic   8 bytes  b"PEGRLCKP"
    version uint32
    count   uint32
    per block:
        name length uint16, name (utf-8)
        ndim uint8, dims uint64[ndim]
        data float64[prod(dims)]
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PEGRLCKP"
VERSION = 1


class CheckpointVersionError(ValueError):
    pass


class CheckpointFormatError(ValueError):
    pass


def save_blocks(path, blocks: dict):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blocks)))
        for name, arr in blocks.items():
            arr = np.asarray(arr)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    tmp.replace(path)


def load_blocks(path) -> dict:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, expected {VERSION}")
    off = 16
    blocks = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off: off + n].decode("utf-8")
        off += n
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
        blocks[name] = arr
    if off != len(data):
        raise CheckpointFormatError(f"{path}: trailing bytes after {count} blocks")
    return blocks
