import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ciatr.augment import AugmentConfig
from ciatr.core import SeedStream
from ciatr.spatial import TRANSFORMS, TransformSpec, rotate, rst, sample_transform_spec, scale, translate

img16 = st.integers(0, 2**31).map(lambda s: np.random.default_rng(s).random((16, 16)))


def test_empty_spec_is_identity_copy(rng):
    x = rng.random((16, 16))
    out = rst(x, TransformSpec())
    assert np.array_equal(out, x) and out is not x


@given(img16)
def test_flips_are_involutions(x):
    for name in ("flip_h", "flip_v"):
        spec = TransformSpec((name,), (0.3,))
        assert np.array_equal(rst(rst(x, spec), spec), x)
    assert np.array_equal(rst(x, TransformSpec(("flip_h",), (1.0,))), x[:, ::-1])
    assert np.array_equal(rst(x, TransformSpec(("flip_v",), (1.0,))), x[::-1, :])


def test_quarter_turn_matches_rot90(rng):
    x = rng.random((8, 8))
    # positive angles turn clockwise when rows grow downward
    np.testing.assert_allclose(rotate(x, 90.0), np.rot90(x, 3), atol=1e-12)
    np.testing.assert_allclose(rotate(x, -90.0), np.rot90(x, 1), atol=1e-12)
    np.testing.assert_allclose(rotate(x, 360.0), x, atol=1e-12)


def test_integer_translate_is_zero_filled_shift(rng):
    x = rng.random((10, 12))
    t = translate(x, 2.0, -3.0)
    assert np.array_equal(t[2:, :-3], x[:-2, 3:])
    assert not t[:2].any() and not t[:, -3:].any()


def test_unit_scale_and_zero_rotation_are_exact(rng):
    x = rng.random((16, 16))
    np.testing.assert_allclose(scale(x, 1.0), x, atol=1e-15)
    np.testing.assert_allclose(rotate(x, 0.0), x, atol=1e-15)


def test_scale_shrinks_support():
    x = np.zeros((33, 33))
    x[4:29, 4:29] = 1.0
    small = scale(x, 0.5)
    assert small[16, 16] == 1.0
    assert not small[:8].any() and not small[-8:].any()


@given(img16, st.lists(st.floats(-3, 3), min_size=5, max_size=5), st.lists(st.booleans(), min_size=5, max_size=5))
@settings(max_examples=40, deadline=None)
def test_rst_preserves_shape_and_bounds(x, mags, keep):
    q = tuple(n for n, k in zip(TRANSFORMS, keep) if k)
    m = tuple(v for v, k in zip(mags, keep) if k)
    out = rst(x, TransformSpec(q, m))
    assert out.shape == x.shape
    # bilinear weights are a convex combination of pixels and zero padding
    assert out.min() >= min(0.0, x.min()) - 1e-12
    assert out.max() <= x.max() + 1e-12


def test_rst_uses_canonical_order(rng):
    x = rng.random((16, 16))
    forward = rst(x, TransformSpec(("rotate", "translate"), (1.0, 0.5)))
    backward = rst(x, TransformSpec(("translate", "rotate"), (0.5, 1.0)))
    assert np.array_equal(forward, backward)
    manual = translate(rotate(x, 15.0), 1.5, 1.5)
    assert np.array_equal(forward, manual)


def test_scale_magnitude_is_clamped(rng):
    x = rng.random((16, 16))
    assert np.array_equal(rst(x, TransformSpec(("scale",), (50.0,))), scale(x, 1.3))
    assert np.array_equal(rst(x, TransformSpec(("scale",), (-50.0,))), scale(x, 0.7))


@pytest.mark.parametrize("q, m", [(("rotate",), ()), (("rotate", "rotate"), (1.0, 1.0)), (("shear",), (1.0,)),
                                  (("rotate",), (float("nan"),))])
def test_transform_spec_validation(q, m):
    with pytest.raises(ValueError):
        TransformSpec(q, m)


def test_sample_transform_inclusion_extremes():
    assert sample_transform_spec(SeedStream(1), AugmentConfig(include_prob=0.0)).q == ()
    assert sample_transform_spec(SeedStream(1), AugmentConfig(include_prob=1.0)).q == TRANSFORMS


def test_sample_transform_statistics():
    cfg = AugmentConfig(include_prob=0.5, sigma_rotate=2.0)
    counts = dict.fromkeys(TRANSFORMS, 0)
    rot = []
    n = 4000
    for i in range(n):
        spec = sample_transform_spec(SeedStream(i), cfg)
        for name, mag in zip(spec.q, spec.magnitudes):
            counts[name] += 1
            if name == "rotate":
                rot.append(mag)
    for name in TRANSFORMS:
        assert abs(counts[name] / n - 0.5) < 4 * np.sqrt(0.25 / n)
    assert abs(np.std(rot) - 2.0) < 0.15


def test_mean_transform_count():
    g = np.random.default_rng(5)
    cfg = AugmentConfig(include_prob=0.5)
    mean = np.mean([len(sample_transform_spec(g, cfg).q) for _ in range(10_000)])
    assert 2.4 <= mean <= 2.6


def test_rotation_round_trip_on_smooth_field():
    rr, cc = np.mgrid[0:64, 0:64]
    blob = np.exp(-((rr - 30.0) ** 2 + (cc - 35.0) ** 2) / (2 * 5.0 ** 2))
    for theta in (7.0, 23.0, 41.0):
        back = rotate(rotate(blob, theta), -theta)
        assert np.max(np.abs(back - blob)) < 0.02 * blob.max()
