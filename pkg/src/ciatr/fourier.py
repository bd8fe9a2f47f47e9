"""2-D Fourier transforms and the random frequency mask.

Patches tile the *unshifted* spectrum and are numbered in row-major order,
so patch 0 always holds the DC coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .core import SeedStream, ShapeError, is_power_of_two

if TYPE_CHECKING:
    from .augment import AugmentConfig


def _check_pow2(arr: np.ndarray, name: str) -> None:
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    if not (is_power_of_two(h) and is_power_of_two(w)):
        raise ShapeError(f"{name} dimensions must be powers of two, got {h}x{w}")


def fft2(img) -> np.ndarray:
    """Unnormalized forward 2-D DFT of a real or complex power-of-two grid."""
    arr = np.asarray(img)
    _check_pow2(arr, "img")
    return np.fft.fft2(arr.astype(np.complex128, copy=False), norm="backward")


def ifft2(spec) -> np.ndarray:
    """Inverse 2-D DFT; carries the ``1/(h*w)`` factor."""
    arr = np.asarray(spec)
    _check_pow2(arr, "spec")
    return np.fft.ifft2(arr.astype(np.complex128, copy=False), norm="backward")


@dataclass(frozen=True)
class MaskSpec:
    """Random frequency mask parameters.

    Attributes
    ----------
    rm_re : int
        Patch edge length in spectrum bins.
    rm_ra : float
        Requested fraction of patches to zero.
    rm_l : tuple of int
        Row-major indices of the zeroed patches; never contains 0 (DC).
    """

    rm_re: int
    rm_ra: float
    rm_l: tuple[int, ...] = ()

    def num_patches(self, h: int, w: int) -> int:
        return (h // self.rm_re) * (w // self.rm_re)

    def validate(self, h: int, w: int) -> None:
        if self.rm_re <= 0 or h % self.rm_re or w % self.rm_re:
            raise ShapeError(f"patch edge {self.rm_re} does not tile a {h}x{w} spectrum")
        if not 0.0 <= self.rm_ra <= 1.0:
            raise ValueError(f"rm_ra must lie in [0, 1], got {self.rm_ra}")
        n = self.num_patches(h, w)
        if len(set(self.rm_l)) != len(self.rm_l):
            raise ValueError("rm_l contains repeated patch indices")
        if any(p < 1 or p >= n for p in self.rm_l):
            raise ValueError(f"rm_l indices must lie in [1, {n})")


def masked_count(rm_ra: float, num_patches: int) -> int:
    """Number of patches zeroed for a ratio; capped because DC is never masked."""
    return min(int(np.floor(rm_ra * num_patches + 0.5)), num_patches - 1)


def sample_mask_spec(h: int, w: int, rng: SeedStream | np.random.Generator, cfg: "AugmentConfig") -> MaskSpec:
    gen = rng.generator() if isinstance(rng, SeedStream) else rng
    choices = list(cfg.rm_re_choices)
    for re in choices:
        if re <= 0 or h % re or w % re:
            raise ShapeError(f"rm_re choice {re} does not divide {h}x{w}")
    rm_re = int(choices[gen.integers(len(choices))])
    rm_ra = float(gen.uniform(0.0, cfg.ra_max)) if cfg.ra_max > 0 else 0.0
    n = (h // rm_re) * (w // rm_re)
    k = masked_count(rm_ra, n)
    rm_l = np.sort(gen.choice(np.arange(1, n), size=k, replace=False)) if k else ()
    return MaskSpec(rm_re, rm_ra, tuple(int(p) for p in rm_l))


def zero_mask(shape: tuple[int, int], mask: MaskSpec) -> np.ndarray:
    """Boolean array marking every spectrum bin that ``rfm`` zeroes."""
    h, w = shape
    mask.validate(h, w)
    re = mask.rm_re
    cols = w // re
    zeroed = np.zeros((h, w), dtype=bool)
    for p in mask.rm_l:
        r, c = divmod(p, cols)
        zeroed[r * re:(r + 1) * re, c * re:(c + 1) * re] = True
    # conjugate mirror: (u, v) -> (-u mod h, -v mod w)
    mirror = np.roll(zeroed[::-1, ::-1], 1, axis=(0, 1))
    return zeroed | mirror


def rfm(spec, mask: MaskSpec) -> np.ndarray:
    """Zero the masked patches and their Hermitian mirrors."""
    arr = np.asarray(spec, dtype=np.complex128)
    _check_pow2(arr, "spec")
    if not mask.rm_l:
        mask.validate(*arr.shape)
        return arr.copy()
    out = arr.copy()
    out[zero_mask(arr.shape, mask)] = 0.0
    return out
