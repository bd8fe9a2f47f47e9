"""Numeric substrate: image validation, min-max normalization, seeded streams."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

_U64 = (1 << 64) - 1
_U32 = (1 << 32) - 1

# Purpose tags for SeedStream.stream_id at the top level of a run.
STREAM_DATA = 1
STREAM_INIT = 2
STREAM_AUGMENT = 3
STREAM_SHUFFLE = 4
STREAM_PREVIEW = 5


class ShapeError(ValueError):
    """Raised when array dimensions violate a shape contract."""


@dataclass(frozen=True)
class SeedStream:
    """A reproducible source of randomness identified by ``(seed, stream_id)``.

    Two streams with the same pair produce identical draws; different
    ``stream_id`` values under one seed are independent.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= _U64 and 0 <= self.stream_id <= _U64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")

    def generator(self) -> np.random.Generator:
        # fixed four-word entropy so distinct pairs never alias inside SeedSequence
        words = [self.seed & _U32, self.seed >> 32, self.stream_id & _U32, self.stream_id >> 32]
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))

    def child(self, stream_id: int) -> "SeedStream":
        """Stream with the same root mixed seed but a new purpose tag."""
        return SeedStream(_mix(self.seed, self.stream_id), stream_id)


def _mix(*values: int) -> int:
    payload = struct.pack(f"<{len(values)}Q", *(v & _U64 for v in values))
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def derive_sample_seed(root: SeedStream, epoch: int, sample_index: int) -> SeedStream:
    """Counter-based per-sample stream.

    The result depends only on ``(root, epoch, sample_index)``, so samples can
    be processed in any order. Injective over indices below ``2**32``: the
    pair is packed verbatim into ``stream_id``.
    """
    if epoch < 0 or sample_index < 0:
        raise ValueError("epoch and sample_index must be non-negative")
    if epoch > _U32 or sample_index > _U32:
        raise ValueError("epoch and sample_index must fit in 32 bits")
    return SeedStream(_mix(root.seed, root.stream_id), (epoch << 32) | sample_index)


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def check_grid(img, name: str = "img", min_size: int = 8) -> np.ndarray:
    """Validate a 2-D image grid and return it as a float64 array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    if h < min_size or w < min_size or not (is_power_of_two(h) and is_power_of_two(w)):
        raise ShapeError(f"{name} dimensions must be powers of two >= {min_size}, got {h}x{w}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def normalize_minmax(img) -> np.ndarray:
    """Affinely map ``img`` onto [0, 1]; a constant image maps to zeros."""
    arr = np.asarray(img, dtype=np.float64)
    lo = arr.min()
    span = arr.max() - lo
    if span <= 0:
        return np.zeros_like(arr)
    out = (arr - lo) / span
    # guard against 1 + ulp from the division
    return np.clip(out, 0.0, 1.0)
