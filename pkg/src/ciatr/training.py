"""Losses, the interventional training loop, and evaluation."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .augment import AugmentConfig, build_augmented_set
from .core import STREAM_AUGMENT, STREAM_INIT, STREAM_SHUFFLE, SeedStream, derive_sample_seed
from .model import (FeatureBundle, ForwardCache, ModelParams, backward, forward_batch, init_params,
                    predict_logits, sgd_step)
from .similarity import pairwise_hm, pairwise_hm_backward

logger = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, l_ce: float, l_d: float):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: L_ce={l_ce}, L_d={l_d}")
        self.epoch = epoch
        self.batch = batch
        self.l_ce = l_ce
        self.l_d = l_d


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 24
    lr: float = 0.01
    momentum: float = 0.9
    margin: float = 0.5
    lambda_d: float = 1.0
    seed: int = 0
    augment_on: bool = True
    ld_on: bool = True

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        if not self.lambda_d >= 0:
            raise ValueError("lambda_d must be non-negative")


@dataclass(frozen=True)
class LossReport:
    L_ce: float
    L_d: float
    total: float
    num_active_triplets: int


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    L_ce: float
    L_d: float
    total: float
    active_triplets: int
    train_acc: float

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    per_class_accuracy: list[float]
    confusion: list[list[int]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"accuracy": self.accuracy, "per_class_accuracy": self.per_class_accuracy,
                "confusion": self.confusion}


# --- losses -----------------------------------------------------------------


def loss_ce(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(labels)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_z[:, None]
    loss = -log_p[np.arange(n), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def triplet_mask(labels) -> np.ndarray:
    """``mask[a, p, n]`` is true for anchor != positive, same label, different negative label."""
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    pos = same & ~np.eye(len(labels), dtype=bool)
    return pos[:, :, None] & ~same[:, None, :]


def triplet_hinge(sim: np.ndarray, labels, margin: float) -> tuple[float, int, np.ndarray]:
    """Batch-all triplet hinge on a similarity matrix.

    Averages ``max(0, margin - sim[a, p] + sim[a, n])`` over the active
    (strictly positive) triplets. Returns the loss, the number of active
    triplets and the gradient w.r.t. ``sim``.
    """
    valid = triplet_mask(labels)
    hinge = margin - sim[:, :, None] + sim[:, None, :]
    active = valid & (hinge > 0)
    count = int(active.sum())
    grad = np.zeros_like(sim)
    if count == 0:
        return 0.0, 0, grad
    loss = hinge[active].sum() / count
    act = active.astype(np.float64)
    grad -= act.sum(axis=2) / count
    grad += act.sum(axis=1) / count
    return float(loss), count, grad


def loss_d(bundles: FeatureBundle, labels, margin: float) -> tuple[float, int, np.ndarray, np.ndarray]:
    """Discrimination loss on hybrid similarity of a batch of bundles.

    Returns ``(loss, num_active, d_feature_map, d_feature_vector)``. A batch
    without any valid triplet yields zero loss and zero gradients.
    """
    stm_mat, vam_mat, cache = pairwise_hm(bundles.feature_map, bundles.feature_vector)
    loss, count, d_sim = triplet_hinge(stm_mat + vam_mat, labels, margin)
    if count == 0:
        return 0.0, 0, np.zeros_like(cache.maps), np.zeros_like(cache.vecs)
    dmaps, dvecs = pairwise_hm_backward(cache, d_sim)
    return loss, count, dmaps, dvecs


def batch_loss(params: ModelParams, X: np.ndarray, y: np.ndarray, margin: float, lambda_d: float,
               use_ld: bool = True) -> tuple[LossReport, ModelParams, FeatureBundle, ForwardCache]:
    """Forward, both losses and their summed gradient for one batch."""
    bundles, cache = forward_batch(params, X)
    l_ce, d_logits = loss_ce(bundles.logits, y)
    l_d, active, dmaps, dvecs = 0.0, 0, None, None
    if use_ld and lambda_d > 0:
        l_d, active, dmaps, dvecs = loss_d(bundles, y, margin)
    d_feat = None
    if dmaps is not None:
        d_feat = lambda_d * (dmaps.reshape(len(X), -1) + dvecs)
    grads = backward(params, cache, d_logits, d_feat)
    report = LossReport(l_ce, l_d, l_ce + lambda_d * l_d, active)
    return report, grads, bundles, cache


# --- training -----------------------------------------------------------------


def train(X: np.ndarray, y: np.ndarray, cfg: TrainConfig, acfg: AugmentConfig,
          num_classes: int | None = None) -> tuple[ModelParams, list[EpochRecord]]:
    """Train from scratch on normalized images ``X`` with labels ``y``.

    Each epoch rebuilds the augmented set (one fresh copy per sample),
    shuffles it, and takes one momentum-SGD step per mini-batch on
    ``L_ce + lambda_d * L_d``. Deterministic given ``cfg.seed``.
    """
    cfg.validate()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("training set is empty")
    n_cls = int(num_classes if num_classes is not None else y.max() + 1)
    aug = acfg if cfg.augment_on else AugmentConfig(enabled=False)
    if aug.enabled:
        aug.validate()
    root = SeedStream(cfg.seed)
    params = init_params(root.child(STREAM_INIT), X.shape[1], X.shape[2], n_cls)
    velocity = params.zeros_like()
    aug_root = root.child(STREAM_AUGMENT)
    shuffle_root = root.child(STREAM_SHUFFLE)
    history: list[EpochRecord] = []
    for epoch in range(cfg.epochs):
        Xa, ya, _ = build_augmented_set(X, y, epoch, aug_root, aug)
        order = derive_sample_seed(shuffle_root, epoch, 0).generator().permutation(len(Xa))
        sums = np.zeros(3)
        active = 0
        correct = 0
        batches = 0
        for b, start in enumerate(range(0, len(Xa), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            report, grads, bundles, _ = batch_loss(params, Xa[idx], ya[idx], cfg.margin, cfg.lambda_d, cfg.ld_on)
            if not (np.isfinite(report.L_ce) and np.isfinite(report.L_d)):
                raise NonFiniteLossError(epoch, b, report.L_ce, report.L_d)
            params, velocity = sgd_step(params, grads, cfg.lr, cfg.momentum, velocity)
            sums += (report.L_ce, report.L_d, report.total)
            active += report.num_active_triplets
            correct += int((bundles.logits.argmax(axis=1) == ya[idx]).sum())
            batches += 1
        mean = sums / batches
        rec = EpochRecord(epoch, float(mean[0]), float(mean[1]), float(mean[2]), active, correct / len(Xa))
        history.append(rec)
        logger.debug("epoch %d: %s", epoch, rec)
    return params, history


def evaluate(params: ModelParams, X: np.ndarray, y: np.ndarray) -> EvalReport:
    """Argmax accuracy; ties go to the lower class index."""
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("test set is empty")
    pred = predict_logits(params, X).argmax(axis=1)
    c = params.num_classes
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    counts = confusion.sum(axis=1)
    per_class = [float(confusion[k, k] / counts[k]) if counts[k] else 0.0 for k in range(c)]
    acc = float(np.trace(confusion) / confusion.sum())
    return EvalReport(acc, per_class, confusion.tolist())
