"""Spatial-frequency hybrid augmentation of training images."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import SeedStream, derive_sample_seed, normalize_minmax
from .fourier import MaskSpec, fft2, ifft2, rfm, sample_mask_spec
from .spatial import TransformSpec, rst, sample_transform_spec
from .synthdata import LabeledImage


@dataclass(frozen=True)
class AugmentConfig:
    ra_max: float = 0.3
    rm_re_choices: tuple[int, ...] = (4, 8, 16)
    include_prob: float = 0.5
    sigma_rotate: float = 1.0
    sigma_scale: float = 1.0
    sigma_translate: float = 1.0
    sigma_flip_h: float = 1.0
    sigma_flip_v: float = 1.0
    enabled: bool = True
    # reuse the epoch-0 copies instead of redrawing every epoch
    fixed: bool = False

    def sigma(self, name: str) -> float:
        return getattr(self, f"sigma_{name}")

    def validate(self) -> None:
        if not 0.0 <= self.ra_max <= 1.0:
            raise ValueError(f"ra_max must lie in [0, 1], got {self.ra_max}")
        if not 0.0 <= self.include_prob <= 1.0:
            raise ValueError(f"include_prob must lie in [0, 1], got {self.include_prob}")
        if not self.rm_re_choices or any(int(r) <= 0 for r in self.rm_re_choices):
            raise ValueError("rm_re_choices must be a non-empty list of positive integers")
        for name in ("rotate", "scale", "translate", "flip_h", "flip_v"):
            if not self.sigma(name) > 0:
                raise ValueError(f"sigma_{name} must be positive")


@dataclass(frozen=True)
class AugmentTrace:
    """Intermediate stages of one augmentation draw (for previews and tests)."""

    original: np.ndarray
    spectrum: np.ndarray
    masked_spectrum: np.ndarray
    inverted: np.ndarray
    final: np.ndarray
    mask: MaskSpec
    transform: TransformSpec


def augment_trace(img, rng: SeedStream, cfg: AugmentConfig) -> AugmentTrace:
    """Run ``RST(ifft(RFM(fft(x))))`` on a normalized image, keeping every stage."""
    x = normalize_minmax(img)
    gen = rng.generator()
    mask = sample_mask_spec(x.shape[0], x.shape[1], gen, cfg)
    spec = sample_transform_spec(gen, cfg)
    spectrum = fft2(x)
    masked = rfm(spectrum, mask)
    inverted = ifft2(masked).real
    final = normalize_minmax(rst(inverted, spec))
    return AugmentTrace(x, spectrum, masked, inverted, final, mask, spec)


def augment_image(img, rng: SeedStream, cfg: AugmentConfig) -> np.ndarray:
    return augment_trace(img, rng, cfg).final


def augment_sample(x: LabeledImage, rng: SeedStream, cfg: AugmentConfig) -> LabeledImage:
    """Augmented copy with the label and recorded imaging condition kept."""
    if not cfg.enabled:
        raise ValueError("augmentation is disabled in this config")
    return replace(x, image=augment_image(x.image, rng, cfg))


def build_augmented_set(X: np.ndarray, y: np.ndarray, epoch: int, root: SeedStream,
                        cfg: AugmentConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Interleave each original with one fresh augmented copy.

    Returns ``(X_a, y_a, is_copy)``; ``X_a[2i]`` is the original sample
    ``i`` and ``X_a[2i + 1]`` its copy. With augmentation disabled the input
    is returned unchanged. Copies for ``(epoch, i)`` come from their own
    derived seed, so the result does not depend on processing order.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if not cfg.enabled:
        return X, y, np.zeros(len(X), dtype=bool)
    e = 0 if cfg.fixed else epoch
    copies = np.stack([augment_image(X[i], derive_sample_seed(root, e, i), cfg) for i in range(len(X))])
    Xa = np.empty((2 * len(X),) + X.shape[1:])
    Xa[0::2] = X
    Xa[1::2] = copies
    ya = np.repeat(y, 2)
    is_copy = np.tile([False, True], len(X))
    return Xa, ya, is_copy
