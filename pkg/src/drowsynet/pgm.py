"""Binary PGM (P5, maxval 255) frame I/O."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PGMError(ValueError):
    pass


def encode_pgm(img) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise PGMError("PGM writer needs a 2-D uint8 array")
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def decode_pgm(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    tokens: list[bytes] = []
    pos = 0
    n = len(blob)
    while len(tokens) < 4:
        while pos < n and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < n and blob[pos:pos + 1] == b"#":
            while pos < n and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not blob[pos:pos + 1].isspace() and blob[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PGMError(f"{source}: truncated PGM header")
        tokens.append(blob[start:pos])
    if tokens[0] != b"P5":
        raise PGMError(f"{source}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PGMError(f"{source}: malformed PGM header") from exc
    if maxval != 255:
        raise PGMError(f"{source}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte before the raster
    raster = blob[pos:pos + w * h]
    if len(raster) != w * h:
        raise PGMError(f"{source}: raster has {len(raster)} bytes, expected {w * h}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def write_pgm(path, img) -> None:
    Path(path).write_bytes(encode_pgm(img))


def read_pgm(path) -> np.ndarray:
    p = Path(path)
    return decode_pgm(p.read_bytes(), str(p))
