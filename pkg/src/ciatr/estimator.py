"""scikit-learn compatible wrappers around the functional training core."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_is_fitted

from .augment import AugmentConfig, augment_image
from .core import STREAM_PREVIEW, SeedStream, ShapeError, derive_sample_seed, is_power_of_two, normalize_minmax
from .model import forward_batch, predict_logits
from .training import TrainConfig, train


def check_images(X, *, require_pow2: bool = False, min_size: int = 8) -> np.ndarray:
    """Validate a stack of single-channel images.

    Accepts ``(n, h, w)`` arrays, or ``(n, h*w)`` when ``h == w`` is a perfect
    square. Returns a float64 copy.

    Raises
    ------
    ShapeError
        On wrong rank, too-small or non-square flat input, or (with
        ``require_pow2``) a side that is not a power of two.
    ValueError
        On NaN or infinite values.
    """
    X = np.array(X, dtype=np.float64)
    if X.ndim == 2:
        side = int(round(np.sqrt(X.shape[1])))
        if side * side != X.shape[1]:
            raise ShapeError(f"flat input needs a square image size, got {X.shape[1]} features")
        X = X.reshape(len(X), side, side)
    if X.ndim != 3:
        raise ShapeError(f"expected (n, h, w) images, got shape {X.shape}")
    if len(X) == 0:
        raise ValueError("need at least one image")
    h, w = X.shape[1:]
    if h < min_size or w < min_size:
        raise ShapeError(f"images must be at least {min_size}x{min_size}, got {h}x{w}")
    if require_pow2 and not (is_power_of_two(h) and is_power_of_two(w)):
        raise ShapeError(f"image sides must be powers of two, got {h}x{w}")
    if not np.isfinite(X).all():
        raise ValueError("input contains NaN or infinity")
    return X


class CIATRClassifier(ClassifierMixin, BaseEstimator):
    """Two-layer CNN trained with augmented interventions and a triplet term.

    Parameters
    ----------
    epochs, batch_size, lr, momentum : training schedule.
    margin : float
        Triplet hinge margin on the hybrid similarity.
    lambda_d : float
        Weight of the triplet term.
    augment, use_ld : bool
        Toggle augmentation and the triplet term.
    ra_max, include_prob : float
        Augmentation knobs; see :class:`ciatr.augment.AugmentConfig`.
    random_state : int
        Root seed for init, augmentation and shuffling.
    """

    def __init__(self, epochs=150, batch_size=24, lr=0.01, momentum=0.9, margin=0.5, lambda_d=1.0,
                 augment=True, use_ld=True, ra_max=0.3, include_prob=0.5, random_state=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.margin = margin
        self.lambda_d = lambda_d
        self.augment = augment
        self.use_ld = use_ld
        self.ra_max = ra_max
        self.include_prob = include_prob
        self.random_state = random_state

    def _configs(self) -> tuple[TrainConfig, AugmentConfig]:
        tcfg = TrainConfig(self.epochs, self.batch_size, self.lr, self.momentum, self.margin, self.lambda_d,
                           int(self.random_state), bool(self.augment), bool(self.use_ld))
        return tcfg, AugmentConfig(ra_max=self.ra_max, include_prob=self.include_prob)

    def fit(self, X, y):
        X = check_images(X, require_pow2=bool(self.augment))
        y = np.asarray(y)
        if y.shape != (len(X),):
            raise ValueError(f"y must have shape ({len(X)},), got {y.shape}")
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        codes = self._encoder.transform(y)
        tcfg, acfg = self._configs()
        Xn = np.stack([normalize_minmax(x) for x in X])
        self.params_, self.history_ = train(Xn, codes, tcfg, acfg, num_classes=len(self.classes_))
        self.image_shape_ = X.shape[1:]
        return self

    def _prepare(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_images(X)
        if X.shape[1:] != self.image_shape_:
            raise ShapeError(f"fitted on {self.image_shape_} images, got {X.shape[1:]}")
        return np.stack([normalize_minmax(x) for x in X])

    def decision_function(self, X) -> np.ndarray:
        X = self._prepare(X)
        return predict_logits(self.params_, X)

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def transform(self, X) -> np.ndarray:
        """Penultimate feature vectors, shape ``(n, feature_dim)``."""
        X = self._prepare(X)
        bundles, _ = forward_batch(self.params_, X)
        return bundles.feature_vector


class SpatialFrequencyAugmenter(TransformerMixin, BaseEstimator):
    """Stateless transformer producing one augmented copy per input image.

    Output is deterministic in ``random_state`` and the row index.
    """

    def __init__(self, ra_max=0.3, include_prob=0.5, random_state=0):
        self.ra_max = ra_max
        self.include_prob = include_prob
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_images(X, require_pow2=True)
        self.image_shape_ = X.shape[1:]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "image_shape_")
        X = check_images(X, require_pow2=True)
        cfg = AugmentConfig(ra_max=self.ra_max, include_prob=self.include_prob)
        cfg.validate()
        root = SeedStream(int(self.random_state)).child(STREAM_PREVIEW)
        return np.stack([augment_image(x, derive_sample_seed(root, 0, i), cfg) for i, x in enumerate(X)])
