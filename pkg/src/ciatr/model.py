"""Two-layer convolutional feature extractor with a linear head.

Architecture, for an ``h x w`` input::

    conv 3x3 (1 -> 8, pad 1) -> ReLU -> maxpool 2x2
    conv 3x3 (8 -> 16, pad 1) -> ReLU -> maxpool 2x2   => feature map 16 x h/4 x w/4
    flatten                                             => feature vector
    linear                                              => logits

Gradients are computed by hand. Max-pool ties go to the first maximal
element in row-major order; ReLU has zero slope at zero.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import SeedStream, ShapeError

CONV1_OUT = 8
CONV2_OUT = 16


@dataclass
class ModelParams:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.fc_w.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.fc_w.shape[1]

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def map(self, fn) -> "ModelParams":
        return ModelParams(*(fn(v) for _, v in self.items()))

    def zeros_like(self) -> "ModelParams":
        return self.map(np.zeros_like)

    def copy(self) -> "ModelParams":
        return self.map(np.copy)

    def check_input(self, h: int, w: int) -> None:
        expected = CONV2_OUT * (h // 4) * (w // 4)
        if h % 4 or w % 4 or expected != self.feature_dim:
            raise ShapeError(
                f"model expects feature dim {self.feature_dim}, a {h}x{w} input gives {expected}")


# Gradients share the parameter layout.
GradientBundle = ModelParams


@dataclass
class FeatureBundle:
    """Extracted features for one sample, or a batch along a leading axis."""

    feature_map: np.ndarray
    feature_vector: np.ndarray
    logits: np.ndarray

    def __getitem__(self, i) -> "FeatureBundle":
        return FeatureBundle(self.feature_map[i], self.feature_vector[i], self.logits[i])

    def __len__(self) -> int:
        return len(self.logits)


def init_params(rng: SeedStream | np.random.Generator, h: int, w: int, num_classes: int) -> ModelParams:
    """He-normal weights, zero biases."""
    if h % 4 or w % 4:
        raise ShapeError(f"input dimensions must be divisible by 4, got {h}x{w}")
    gen = rng.generator() if isinstance(rng, SeedStream) else rng
    feat = CONV2_OUT * (h // 4) * (w // 4)

    def he(shape, fan_in):
        return gen.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    return ModelParams(
        conv1_w=he((CONV1_OUT, 1, 3, 3), 9),
        conv1_b=np.zeros(CONV1_OUT),
        conv2_w=he((CONV2_OUT, CONV1_OUT, 3, 3), CONV1_OUT * 9),
        conv2_b=np.zeros(CONV2_OUT),
        fc_w=he((num_classes, feat), feat),
        fc_b=np.zeros(num_classes),
    )


def _im2col(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B*H*W, C*9) patches of the zero-padded input."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (B, C, H, W, 3, 3)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * 9)


def _conv_forward(x, weight, bias):
    b, _, h, w = x.shape
    cols = _im2col(x)
    out = cols @ weight.reshape(weight.shape[0], -1).T + bias
    return out.reshape(b, h, w, -1).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, weight, need_dx=True):
    cout = weight.shape[0]
    d = dout.transpose(0, 2, 3, 1).reshape(-1, cout)
    dw = (d.T @ cols).reshape(weight.shape)
    db = d.sum(axis=0)
    if not need_dx:
        return None, dw, db
    # input gradient of a stride-1 "same" conv is a conv with the flipped, transposed kernel
    flipped = np.ascontiguousarray(weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx, _ = _conv_forward(dout, flipped, 0.0)
    return dx, dw, db


def _pool_forward(x):
    b, c, h, w = x.shape
    win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dout, idx, x_shape):
    b, c, h, w = x_shape
    dwin = np.zeros((b, c, h // 2, w // 2, 4))
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    return dwin.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)


@dataclass
class ForwardCache:
    x_shape: tuple
    cols1: np.ndarray
    relu1: np.ndarray
    pool1_idx: np.ndarray
    a1_shape: tuple
    p1_shape: tuple
    cols2: np.ndarray
    relu2: np.ndarray
    pool2_idx: np.ndarray
    a2_shape: tuple
    features: np.ndarray

    def pattern(self) -> tuple:
        """Piecewise-linear region of the network: ReLU masks and pool choices."""
        return (self.relu1, self.pool1_idx, self.relu2, self.pool2_idx)


def forward_batch(params: ModelParams, X: np.ndarray) -> tuple[FeatureBundle, ForwardCache]:
    """Run the network on a stack of images ``(B, h, w)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ShapeError(f"expected a (B, h, w) batch, got shape {X.shape}")
    params.check_input(X.shape[1], X.shape[2])
    x = X[:, None, :, :]
    z1, cols1 = _conv_forward(x, params.conv1_w, params.conv1_b)
    relu1 = z1 > 0
    a1 = z1 * relu1
    p1, idx1 = _pool_forward(a1)
    z2, cols2 = _conv_forward(p1, params.conv2_w, params.conv2_b)
    relu2 = z2 > 0
    a2 = z2 * relu2
    fmap, idx2 = _pool_forward(a2)
    fvec = fmap.reshape(len(X), -1)
    logits = fvec @ params.fc_w.T + params.fc_b
    cache = ForwardCache(x.shape, cols1, relu1, idx1, a1.shape, p1.shape, cols2, relu2, idx2, a2.shape, fvec)
    return FeatureBundle(fmap, fvec, logits), cache


def forward(params: ModelParams, img) -> FeatureBundle:
    """Features and logits for a single normalized image."""
    bundle, _ = forward_batch(params, np.asarray(img, dtype=np.float64)[None])
    return bundle[0]


def backward(params: ModelParams, cache: ForwardCache, d_logits=None, d_features=None) -> GradientBundle:
    """Reverse-mode gradients for upstream gradients injected at two points.

    ``d_logits`` has shape ``(B, C)``; ``d_features`` is either the feature
    map ``(B, c, h', w')`` or the flat vector ``(B, F)``. Missing gradients
    count as zero; contributions from both are summed.
    """
    b = cache.features.shape[0]
    dfeat = np.zeros_like(cache.features)
    grads_fc_w = np.zeros_like(params.fc_w)
    grads_fc_b = np.zeros_like(params.fc_b)
    if d_logits is not None:
        d_logits = np.asarray(d_logits, dtype=np.float64)
        grads_fc_w = d_logits.T @ cache.features
        grads_fc_b = d_logits.sum(axis=0)
        dfeat = dfeat + d_logits @ params.fc_w
    if d_features is not None:
        dfeat = dfeat + np.asarray(d_features, dtype=np.float64).reshape(b, -1)
    dfmap = dfeat.reshape(cache.a2_shape[0], cache.a2_shape[1], cache.a2_shape[2] // 2, cache.a2_shape[3] // 2)
    da2 = _pool_backward(dfmap, cache.pool2_idx, cache.a2_shape)
    dz2 = da2 * cache.relu2
    dp1, dw2, db2 = _conv_backward(dz2, cache.cols2, params.conv2_w)
    da1 = _pool_backward(dp1, cache.pool1_idx, cache.a1_shape)
    dz1 = da1 * cache.relu1
    _, dw1, db1 = _conv_backward(dz1, cache.cols1, params.conv1_w, need_dx=False)
    return ModelParams(dw1, db1, dw2, db2, grads_fc_w, grads_fc_b)


def sgd_step(params: ModelParams, grads: GradientBundle, lr: float, momentum: float = 0.0,
             velocity: ModelParams | None = None) -> tuple[ModelParams, ModelParams]:
    """Heavy-ball update: ``v <- momentum * v + g``; ``p <- p - lr * v``."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must lie in [0, 1)")
    if velocity is None:
        velocity = params.zeros_like()
    new_v = ModelParams(*(momentum * v + g for (_, v), (_, g) in zip(velocity.items(), grads.items())))
    new_p = ModelParams(*(p - lr * v for (_, p), (_, v) in zip(params.items(), new_v.items())))
    return new_p, new_v


def predict_logits(params: ModelParams, X: np.ndarray, chunk: int = 256) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out = [forward_batch(params, X[i:i + chunk])[0].logits for i in range(0, len(X), chunk)]
    return np.concatenate(out) if out else np.zeros((0, params.num_classes))


# --- checkpoint file --------------------------------------------------------
#
# Layout:
#   line 1: b"CIATR-CKPT\n"
#   line 2: UTF-8 JSON header terminated by b"\n":
#           {"version": 1, "height": h, "width": w, "num_classes": C,
#            "tensors": [[name, [dims...]], ...]}
#   payload: every tensor in header order, C-contiguous little-endian float64,
#            followed by nothing else.

CKPT_MAGIC = b"CIATR-CKPT\n"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(params: ModelParams, h: int, w: int) -> bytes:
    header = {
        "version": CKPT_VERSION,
        "height": h,
        "width": w,
        "num_classes": params.num_classes,
        "tensors": [[name, list(v.shape)] for name, v in params.items()],
    }
    payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for _, v in params.items())
    return CKPT_MAGIC + json.dumps(header).encode("utf-8") + b"\n" + payload


def decode_checkpoint(data: bytes) -> tuple[ModelParams, int, int]:
    if not data.startswith(CKPT_MAGIC):
        raise CheckpointError("missing checkpoint magic")
    rest = data[len(CKPT_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise CheckpointError("unterminated checkpoint header")
    try:
        header = json.loads(rest[:nl].decode("utf-8"))
        version = header["version"]
        h, w = int(header["height"]), int(header["width"])
        tensors = [(str(n), tuple(int(d) for d in dims)) for n, dims in header["tensors"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc}") from exc
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    names = [f.name for f in fields(ModelParams)]
    if [n for n, _ in tensors] != names:
        raise CheckpointError("checkpoint tensor list does not match the model")
    payload = rest[nl + 1:]
    sizes = [int(np.prod(s)) * 8 for _, s in tensors]
    if len(payload) != sum(sizes):
        raise CheckpointError(f"payload is {len(payload)} bytes, header implies {sum(sizes)}")
    arrays, off = [], 0
    for (_, shape), size in zip(tensors, sizes):
        arrays.append(np.frombuffer(payload[off:off + size], dtype="<f8").astype(np.float64).reshape(shape))
        off += size
    params = ModelParams(*arrays)
    try:
        params.check_input(h, w)
    except ShapeError as exc:
        raise CheckpointError(str(exc)) from exc
    if not all(np.all(np.isfinite(v)) for _, v in params.items()):
        raise CheckpointError("checkpoint contains non-finite values")
    return params, h, w


def save_checkpoint(path: str | os.PathLike, params: ModelParams, h: int, w: int) -> None:
    with open(path, "wb") as f:
        f.write(encode_checkpoint(params, h, w))


def load_checkpoint(path: str | os.PathLike) -> tuple[ModelParams, int, int]:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())
