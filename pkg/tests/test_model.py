import numpy as np
import pytest

from ciatr.core import SeedStream, ShapeError
from ciatr.model import (CheckpointError, ModelParams, backward, decode_checkpoint, encode_checkpoint, forward,
                         forward_batch, init_params, predict_logits, sgd_step)
from oracles import central_difference


def naive_conv(x, w, b):
    """Zero-padded 3x3 cross-correlation by explicit loops. x: (C, H, W)."""
    c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((w.shape[0], h, wd))
    for o in range(w.shape[0]):
        for r in range(h):
            for col in range(wd):
                out[o, r, col] = np.sum(xp[:, r:r + 3, col:col + 3] * w[o]) + b[o]
    return out


def naive_pool(x):
    c, h, w = x.shape
    return np.array([[[x[k, 2 * r:2 * r + 2, 2 * q:2 * q + 2].max() for q in range(w // 2)] for r in range(h // 2)]
                     for k in range(c)])


def naive_forward(p: ModelParams, img):
    a = naive_pool(np.maximum(naive_conv(img[None], p.conv1_w, p.conv1_b), 0))
    fmap = naive_pool(np.maximum(naive_conv(a, p.conv2_w, p.conv2_b), 0))
    return fmap, fmap.ravel() @ p.fc_w.T + p.fc_b


@pytest.fixture
def params():
    p = init_params(SeedStream(1), 16, 16, 3)
    g = np.random.default_rng(0)
    return p.map(lambda v: v + 0.05 * g.standard_normal(v.shape))


def test_forward_matches_loop_oracle(params, rng):
    img = rng.random((16, 16))
    fmap, logits = naive_forward(params, img)
    b = forward(params, img)
    np.testing.assert_allclose(b.feature_map, fmap, atol=1e-12)
    np.testing.assert_allclose(b.logits, logits, atol=1e-12)
    assert b.feature_vector.shape == (params.feature_dim,) == (16 * 4 * 4,)


def test_batch_equals_single(params, rng):
    X = rng.random((3, 16, 16))
    bundles, _ = forward_batch(params, X)
    for i in range(3):
        np.testing.assert_allclose(bundles[i].logits, forward(params, X[i]).logits, atol=1e-12)
    assert len(bundles) == 3
    np.testing.assert_allclose(predict_logits(params, X, chunk=2), bundles.logits, atol=1e-12)


def test_init_statistics():
    p = init_params(SeedStream(3), 64, 64, 3)
    assert p.conv1_w.shape == (8, 1, 3, 3) and p.conv2_w.shape == (16, 8, 3, 3) and p.fc_w.shape == (3, 4096)
    assert not p.conv1_b.any() and not p.conv2_b.any() and not p.fc_b.any()
    assert abs(p.fc_w.var() / (2 / 4096) - 1) < 0.05
    assert abs(p.conv2_w.var() / (2 / 72) - 1) < 0.15
    assert np.array_equal(init_params(SeedStream(3), 64, 64, 3).fc_w, p.fc_w)


def test_shape_errors(params):
    with pytest.raises(ShapeError):
        forward_batch(params, np.zeros((2, 32, 32)))
    with pytest.raises(ShapeError):
        forward_batch(params, np.zeros((16, 16)))
    with pytest.raises(ShapeError):
        init_params(SeedStream(0), 18, 16, 3)


def test_backward_matches_finite_differences(params, rng):
    X = rng.random((2, 16, 16))
    g_logits = rng.standard_normal((2, 3))
    g_feat = rng.standard_normal((2, params.feature_dim))
    _, cache = forward_batch(params, X)
    grads = backward(params, cache, g_logits, g_feat)

    def objective(name):
        def f(value):
            p = params.copy()
            setattr(p, name, value)
            b, _ = forward_batch(p, X)
            return np.sum(b.logits * g_logits) + np.sum(b.feature_vector * g_feat)
        return f

    for name, value in params.items():
        num = central_difference(objective(name), value, eps=1e-6)
        np.testing.assert_allclose(getattr(grads, name), num, rtol=1e-5, atol=1e-7)


def test_backward_feature_map_shape_accepted(params, rng):
    X = rng.random((2, 16, 16))
    bundles, cache = forward_batch(params, X)
    g = rng.standard_normal(bundles.feature_map.shape)
    a = backward(params, cache, d_features=g)
    b = backward(params, cache, d_features=g.reshape(2, -1))
    assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(a.items(), b.items()))
    assert not a.fc_w.any()


def test_sgd_momentum_unrolls(params, rng):
    grads = [params.map(lambda v: rng.standard_normal(v.shape)) for _ in range(4)]
    p, v = params, None
    for g in grads:
        p, v = sgd_step(p, g, 0.1, 0.9, v)
    for name, start in params.items():
        gs = [getattr(g, name) for g in grads]
        # p_T = p_0 - lr * sum_t sum_{k<=t} m^(t-k) g_k
        expected = start - 0.1 * sum(sum(0.9 ** (t - k) * gs[k] for k in range(t + 1)) for t in range(4))
        np.testing.assert_allclose(getattr(p, name), expected, atol=1e-12)
    with pytest.raises(ValueError):
        sgd_step(params, grads[0], 0.0)
    with pytest.raises(ValueError):
        sgd_step(params, grads[0], 0.1, 1.0)


def test_checkpoint_round_trip_is_bit_exact(params):
    data = encode_checkpoint(params, 16, 16)
    back, h, w = decode_checkpoint(data)
    assert (h, w) == (16, 16)
    for (_, a), (_, b) in zip(params.items(), back.items()):
        assert a.tobytes() == b.tobytes()
    assert encode_checkpoint(back, 16, 16) == data


@pytest.mark.parametrize("mutate", [
    lambda d: b"X" + bytes(d[1:]),
    lambda d: bytes(d[:-8]),
    lambda d: bytes(d) + b"\x00",
    lambda d: bytes(d).replace(b'"version": 1', b'"version": 2'),
    lambda d: bytes(d).replace(b'"height": 16', b'"height": 32'),
    lambda d: bytes(d).replace(b"conv1_w", b"conv9_w"),
    lambda d: bytes(d).split(b"\n", 1)[0] + b"\n{not json\n",
    lambda d: bytes(d)[:len(bytes(d)) - 8] + np.array([np.nan], "<f8").tobytes(),
])
def test_corrupted_checkpoints_rejected(params, mutate):
    with pytest.raises(CheckpointError):
        decode_checkpoint(mutate(encode_checkpoint(params, 16, 16)))


def test_conv1_init_variance_over_draws():
    w = np.concatenate([init_params(SeedStream(s), 16, 16, 3).conv1_w.ravel() for s in range(10)])
    assert abs(w.var() / (2 / 9) - 1) < 0.2


def test_zero_network_and_default_shapes(rng):
    p = init_params(SeedStream(0), 64, 64, 4).zeros_like()
    b = forward(p, rng.random((64, 64)))
    assert b.feature_map.shape == (16, 16, 16) and b.feature_vector.shape == (4096,) and b.logits.shape == (4,)
    assert not b.logits.any() and not b.feature_vector.any()


def test_head_is_linear(params, rng):
    X = rng.random((2, 16, 16))
    params.fc_b[:] = 0.0
    z1 = forward_batch(params, X)[0].logits
    params.fc_w *= 2.0
    np.testing.assert_allclose(forward_batch(params, X)[0].logits, 2 * z1, rtol=1e-14)


def test_backward_is_linear_in_upstream(params, rng):
    X = rng.random((2, 16, 16))
    _, cache = forward_batch(params, X)
    zero = backward(params, cache, np.zeros((2, 3)), np.zeros((2, params.feature_dim)))
    assert all(not v.any() for _, v in zero.items())
    g1, g2 = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    f1 = rng.standard_normal((2, params.feature_dim))
    a = backward(params, cache, g1, f1)
    b = backward(params, cache, g2)
    both = backward(params, cache, g1 + g2, f1)
    for (_, x), (_, y), (_, z) in zip(a.items(), b.items(), both.items()):
        np.testing.assert_allclose(x + y, z, atol=1e-12)


def test_plain_sgd_step(params, rng):
    g = params.map(lambda v: rng.standard_normal(v.shape))
    new, _ = sgd_step(params, g, 1.0, 0.0)
    for (_, p0), (_, gv), (_, p1) in zip(params.items(), g.items(), new.items()):
        assert np.array_equal(p1, p0 - gv)
    same, v = sgd_step(params, params.zeros_like(), 0.3, 0.9, params.zeros_like())
    assert all(np.array_equal(a, b) for (_, a), (_, b) in zip(params.items(), same.items()))
    assert all(not x.any() for _, x in v.items())
