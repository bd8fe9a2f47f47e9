"""Interventional training for synthetic SAR target recognition."""

from .augment import AugmentConfig, augment_image, build_augmented_set
from .core import SeedStream, ShapeError, derive_sample_seed, normalize_minmax
from .estimator import CIATRClassifier, SpatialFrequencyAugmenter, check_images
from .fourier import MaskSpec, fft2, ifft2, rfm
from .model import ModelParams, forward, forward_batch, init_params
from .similarity import hm, stm, vam
from .spatial import TransformSpec, rst
from .synthdata import ConfoundConfig, gen_dataset
from .training import EvalReport, NonFiniteLossError, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "CIATRClassifier", "ConfoundConfig", "EvalReport", "MaskSpec", "ModelParams",
    "NonFiniteLossError", "SeedStream", "ShapeError", "SpatialFrequencyAugmenter", "TrainConfig",
    "TransformSpec", "augment_image", "build_augmented_set", "check_images", "derive_sample_seed",
    "evaluate", "fft2", "forward", "forward_batch", "gen_dataset", "hm", "ifft2", "init_params",
    "normalize_minmax", "rfm", "rst", "stm", "train", "vam",
]
