"""Binary parameter container.

Layout (all integers little-endian)::

    magic       8 bytes   b"DRWSYCKP"
    version     u32       1
    count       u64       number of records
    record*:
      name_len  u32, name  utf-8 bytes
      rank      u32, extents  rank x u64
      data      prod(extents) x f64
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"DRWSYCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(params: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(params))]
    for name in sorted(params):
        arr = np.asarray(params[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:8] != MAGIC:
        raise CheckpointError("bad magic; not a parameter checkpoint")
    version, count = struct.unpack_from("<IQ", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 8 + 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", blob, off)
            off += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(blob, dtype="<f8", count=size, offset=off)
            off += 8 * size
            out[name] = data.astype(np.float64).reshape(shape)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if off != len(blob):
        raise CheckpointError("trailing bytes after last record")
    return out


def save_checkpoint(path, params: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(params))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
