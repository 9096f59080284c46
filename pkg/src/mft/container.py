"""Versioned binary container shared by checkpoints and packed-set caches.

Layout (all integers little-endian)::

    magic        4 bytes   b"MFT1"
    version      u32       currently 1
    header_len   u32
    header       header_len bytes of UTF-8 JSON: {"kind": ..., "meta": {...}, "n_blocks": N}
    N blocks, each:
        name_len u16
        dtype    u8        0 = float32, 1 = int32, 2 = uint8, 3 = float64
        ndim     u8
        name     name_len bytes of UTF-8
        dims     ndim x u32
        data     prod(dims) * itemsize bytes, C order, little-endian
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MFT1"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i4"), 2: np.dtype("u1"), 3: np.dtype("<f8")}
_CODES = {(dt.kind, dt.itemsize): code for code, dt in _DTYPES.items()}


class ContainerError(ValueError):
    pass


def write_container(path, kind: str, meta: dict, blocks: list[tuple[str, np.ndarray]]) -> Path:
    path = Path(path)
    header = json.dumps({"kind": kind, "meta": meta, "n_blocks": len(blocks)}, sort_keys=True).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for name, arr in blocks:
            arr = np.ascontiguousarray(arr)
            code = _CODES.get((arr.dtype.kind, arr.dtype.itemsize))
            if code is None:
                raise ContainerError(f"unsupported dtype {arr.dtype} for block {name}")
            raw = name.encode()
            fh.write(struct.pack("<HBB", len(raw), code, arr.ndim) + raw)
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype(_DTYPES[code], copy=False).tobytes())
    tmp.replace(path)
    return path


def read_container(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic {data[:4]!r}")
    try:
        header, blocks, off = _parse(data)
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise ContainerError(f"{path}: truncated or corrupt container ({exc})") from exc
    if kind is not None and header["kind"] != kind:
        raise ContainerError(f"{path}: expected kind {kind!r}, found {header['kind']!r}")
    if off != len(data):
        raise ContainerError(f"{path}: {len(data) - off} trailing bytes")
    return header["meta"], blocks


def _parse(data: bytes):
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported version {version}")
    off = 12
    header = json.loads(data[off:off + hlen])
    off += hlen
    blocks: dict[str, np.ndarray] = {}
    for _ in range(header["n_blocks"]):
        nlen, code, ndim = struct.unpack_from("<HBB", data, off)
        off += 4
        name = data[off:off + nlen].decode()
        off += nlen
        dims = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        dt = _DTYPES[code]
        count = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(data, dtype=dt, count=count, offset=off).reshape(dims)
        off += count * dt.itemsize
        blocks[name] = arr.astype(dt.newbyteorder("="), copy=True)
    return header, blocks, off
