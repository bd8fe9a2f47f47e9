"""Random spatial transformation of image grids."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .core import SeedStream

if TYPE_CHECKING:
    from .augment import AugmentConfig

# Canonical application order. Flips ignore their magnitude.
TRANSFORMS = ("rotate", "scale", "translate", "flip_h", "flip_v")

ROTATE_DEG_PER_UNIT = 15.0
TRANSLATE_PX_PER_UNIT = 3.0
SCALE_PER_UNIT = 0.1
SCALE_RANGE = (0.7, 1.3)


@dataclass(frozen=True)
class TransformSpec:
    q: tuple[str, ...] = ()
    magnitudes: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.q) != len(self.magnitudes):
            raise ValueError("q and magnitudes must have equal length")
        if len(set(self.q)) != len(self.q):
            raise ValueError("q must not repeat a transform")
        unknown = set(self.q) - set(TRANSFORMS)
        if unknown:
            raise ValueError(f"unknown transforms: {sorted(unknown)}")
        if not all(np.isfinite(m) for m in self.magnitudes):
            raise ValueError("transform magnitudes must be finite")


def sample_transform_spec(rng: SeedStream | np.random.Generator, cfg: "AugmentConfig") -> TransformSpec:
    """Include each transform independently and draw a normal magnitude for it.

    Flags and magnitudes are drawn for every member regardless of inclusion,
    so the stream consumption does not depend on the outcome.
    """
    gen = rng.generator() if isinstance(rng, SeedStream) else rng
    sigmas = np.array([cfg.sigma(name) for name in TRANSFORMS])
    if np.any(sigmas <= 0):
        raise ValueError("transform sigmas must be positive")
    include = gen.random(len(TRANSFORMS)) < cfg.include_prob
    mags = gen.normal(0.0, sigmas)
    q = tuple(name for name, keep in zip(TRANSFORMS, include) if keep)
    m = tuple(float(v) for v, keep in zip(mags, include) if keep)
    return TransformSpec(q, m)


def _bilinear(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample ``img`` at fractional coordinates; outside the frame reads as zero."""
    h, w = img.shape
    padded = np.zeros((h + 2, w + 2))
    padded[1:-1, 1:-1] = img
    # shift into padded frame and clamp so far-away samples land on the zero border
    r = np.clip(rows + 1.0, 0.0, h + 1.0)
    c = np.clip(cols + 1.0, 0.0, w + 1.0)
    r0 = np.minimum(np.floor(r).astype(np.intp), h)
    c0 = np.minimum(np.floor(c).astype(np.intp), w)
    fr = r - r0
    fc = c - c0
    top = padded[r0, c0] * (1.0 - fc) + padded[r0, c0 + 1] * fc
    bottom = padded[r0 + 1, c0] * (1.0 - fc) + padded[r0 + 1, c0 + 1] * fc
    return top * (1.0 - fr) + bottom * fr


def _warp(img: np.ndarray, inverse: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """Resample so that ``out[p] = img[inverse @ (p - center) + center + offset]``."""
    h, w = img.shape
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dr = rr - center[0]
    dc = cc - center[1]
    src_r = inverse[0, 0] * dr + inverse[0, 1] * dc + center[0] + offset[0]
    src_c = inverse[1, 0] * dr + inverse[1, 1] * dc + center[1] + offset[1]
    return _bilinear(img, src_r, src_c)


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    t = np.deg2rad(degrees)
    cos, sin = np.cos(t), np.sin(t)
    inverse = np.array([[cos, -sin], [sin, cos]])
    return _warp(img, inverse, np.zeros(2))


def scale(img: np.ndarray, factor: float) -> np.ndarray:
    return _warp(img, np.eye(2) / factor, np.zeros(2))


def translate(img: np.ndarray, shift_rows: float, shift_cols: float) -> np.ndarray:
    return _warp(img, np.eye(2), -np.array([shift_rows, shift_cols]))


def rst(img, spec: TransformSpec) -> np.ndarray:
    """Apply the transforms of ``spec`` in canonical order; shape is preserved."""
    out = np.array(img, dtype=np.float64, copy=True)
    params = dict(zip(spec.q, spec.magnitudes))
    for name in TRANSFORMS:
        if name not in params:
            continue
        m = params[name]
        if name == "rotate":
            out = rotate(out, ROTATE_DEG_PER_UNIT * m)
        elif name == "scale":
            out = scale(out, float(np.clip(1.0 + SCALE_PER_UNIT * m, *SCALE_RANGE)))
        elif name == "translate":
            shift = TRANSLATE_PX_PER_UNIT * m
            out = translate(out, shift, shift)
        elif name == "flip_h":
            out = out[:, ::-1].copy()
        else:
            out = out[::-1, :].copy()
    return out
