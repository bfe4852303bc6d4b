"""Flat binary parameter container.

Layout, all little-endian:

    magic   4 bytes  b"IRNF"
    version u32
    count   u32      number of parameters
    then per parameter:
      id_len  u16
      id      id_len bytes, utf-8
      rank    u8
      dims    rank * u32
      payload prod(dims) * float32, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Iterable

import numpy as np

from .tape import Parameter

MAGIC = b"IRNF"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint container."""


def save_checkpoint(path, params: Iterable[Parameter]) -> None:
    params = list(params)
    ids = [p.id for p in params]
    if len(set(ids)) != len(ids):
        raise CheckpointError("duplicate parameter ids")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for p in params:
        ident = p.id.encode("utf-8")
        if len(ident) > 0xFFFF:
            raise CheckpointError(f"parameter id too long: {p.id!r}")
        data = np.ascontiguousarray(p.data, dtype=np.float32)
        if data.ndim > 0xFF:
            raise CheckpointError(f"parameter rank too large: {data.ndim}")
        chunks.append(struct.pack("<H", len(ident)))
        chunks.append(ident)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise CheckpointError(f"truncated checkpoint: needed {n} bytes for {what} at offset {off}")
        piece = raw[off : off + n]
        off += n
        return piece

    if take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic: not an IRNF checkpoint")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (id_len,) = struct.unpack("<H", take(2, "id length"))
        ident = take(id_len, "id").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        size = int(np.prod(dims)) if rank else 1
        payload = take(4 * size, f"payload of {ident!r}")
        out[ident] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if off != len(raw):
        raise CheckpointError(f"{len(raw) - off} trailing bytes after last parameter")
    return out
