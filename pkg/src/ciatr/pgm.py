"""Binary (P5) 8-bit PGM reading and writing."""

from __future__ import annotations

import os

import numpy as np


class PGMError(ValueError):
    pass


def quantize(img) -> np.ndarray:
    """Map [0, 1] values to 8-bit levels with ``round(255 * v)`` (half up)."""
    v = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(255.0 * v + 0.5).astype(np.uint8)


def encode_pgm(img) -> bytes:
    q = quantize(img)
    if q.ndim != 2:
        raise PGMError(f"PGM images must be 2-D, got shape {q.shape}")
    h, w = q.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes()


def write_pgm(path, img) -> None:
    with open(path, "wb") as f:
        f.write(encode_pgm(img))


def decode_pgm(data: bytes) -> np.ndarray:
    """Parse a P5 file and return values scaled to [0, 1]."""
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        # skip whitespace and comments between header tokens
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PGMError("truncated PGM header")
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise PGMError(f"unsupported magic {fields[0]!r}")
    try:
        w, h, maxval = (int(x) for x in fields[1:])
    except ValueError as exc:
        raise PGMError("malformed PGM header") from exc
    if maxval != 255 or w <= 0 or h <= 0:
        raise PGMError(f"unsupported PGM geometry {w}x{h} maxval {maxval}")
    pos += 1  # single whitespace byte ends the header
    payload = data[pos:pos + w * h]
    if len(payload) != w * h:
        raise PGMError("truncated PGM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_pgm(f.read())
