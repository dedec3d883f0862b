"""Binary checkpoint files for named float32 arrays.

Layout (all integers little-endian u32, floats little-endian f32):

    magic   4 bytes  b"ACDR"
    version u32      format version, currently 1
    record* repeated until end of file:
        name_len u32
        name     name_len bytes, utf-8
        rank     u32
        dims     rank x u32
        data     prod(dims) x f32, C order

A rank-0 record stores a single scalar with an empty dims list. Model
parameters and optimizer state use the same layout in sibling files
(``run.acdr`` and ``run.acdr.opt``).
"""

from __future__ import annotations

import struct
from typing import Dict

import numpy as np

__all__ = ["MAGIC", "VERSION", "save_arrays", "load_arrays", "OPT_SUFFIX"]

MAGIC = b"ACDR"
VERSION = 1
OPT_SUFFIX = ".opt"

_U32 = struct.Struct("<I")


def save_arrays(path, arrays: Dict[str, np.ndarray]) -> None:
    """Write named arrays to ``path``; values are cast to float32."""
    chunks = [MAGIC, _U32.pack(VERSION)]
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f4")
        if not np.isfinite(a).all():
            raise ValueError(f"checkpoint: array {name!r} contains non-finite values")
        nb = name.encode("utf-8")
        if not nb:
            raise ValueError("checkpoint: empty array name")
        chunks.append(_U32.pack(len(nb)))
        chunks.append(nb)
        chunks.append(_U32.pack(a.ndim))
        for dim in a.shape:
            chunks.append(_U32.pack(dim))
        chunks.append(a.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_arrays(path) -> Dict[str, np.ndarray]:
    """Read a checkpoint back into an ordered name -> float32 array dict."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (magic {blob[:4]!r})")
    if len(blob) < 8:
        raise ValueError(f"{path}: truncated header")
    version = _U32.unpack_from(blob, 4)[0]
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")

    out: Dict[str, np.ndarray] = {}
    pos = 8
    end = len(blob)

    def take(n: int, what: str) -> int:
        nonlocal pos
        if pos + n > end:
            raise ValueError(f"{path}: truncated while reading {what} at offset {pos}")
        pos += n
        return pos - n

    while pos < end:
        name_len = _U32.unpack_from(blob, take(4, "name length"))[0]
        name = blob[take(name_len, "name"):pos].decode("utf-8")
        rank = _U32.unpack_from(blob, take(4, f"rank of {name!r}"))[0]
        dims = []
        for _ in range(rank):
            dims.append(_U32.unpack_from(blob, take(4, f"dims of {name!r}"))[0])
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        raw = blob[take(4 * count, f"data of {name!r}"):pos]
        if name in out:
            raise ValueError(f"{path}: duplicate array name {name!r}")
        out[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
    return out
