import numpy as np
import pytest
from hypothesis import given
from hypothesis.extra.numpy import arrays
from hypothesis import strategies as st

from ciatr.pgm import PGMError, decode_pgm, encode_pgm, quantize, read_pgm, write_pgm


def test_header_layout():
    data = encode_pgm(np.zeros((2, 3)))
    assert data == b"P5\n3 2\n255\n" + bytes(6)


def test_quantize_rounds_half_up():
    v = np.array([0.0, 0.5 / 255, 1.49 / 255, 1.0, -0.2, 1.7])
    assert quantize(v).tolist() == [0, 1, 1, 255, 0, 255]


@given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=st.floats(0, 1)))
def test_round_trip_within_half_level(img):
    back = decode_pgm(encode_pgm(img))
    assert back.shape == img.shape
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_reencode_is_byte_stable(tmp_path):
    img = np.random.default_rng(0).random((8, 8))
    write_pgm(tmp_path / "a.pgm", img)
    first = (tmp_path / "a.pgm").read_bytes()
    assert encode_pgm(read_pgm(tmp_path / "a.pgm")) == first


def test_header_comments_are_skipped():
    data = b"P5\n# made by hand\n2 1\n# another\n255\n\x00\xff"
    assert decode_pgm(data).tolist() == [[0.0, 1.0]]


@pytest.mark.parametrize("data", [
    b"P2\n1 1\n255\n0",
    b"P5\n2 2\n255\n\x00",
    b"P5\n1 1\n65535\n\x00\x00",
    b"P5\nx 1\n255\n\x00",
    b"P5\n1",
])
def test_malformed_inputs(data):
    with pytest.raises(PGMError):
        decode_pgm(data)
