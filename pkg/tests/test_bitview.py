import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from stegozoo import bitview
from stegozoo.bitview import xlsb, xmsb

words = st.integers(0, 2**32 - 1)
normal_words = st.builds(
    lambda s, e, m: (s << 31) | (e << 23) | m,
    st.integers(0, 1), st.integers(1, 254), st.integers(0, 2**23 - 1),
)


@pytest.mark.parametrize("word, value", [(0x3F800000, 1.0), (0xC0000000, -2.0), (0x00000000, 0.0),
                                         (0x7F800000, math.inf), (0xFF800000, -math.inf),
                                         (0x00000001, 2.0 ** -149), (0x7F7FFFFF, 3.4028234663852886e38)])
def test_decode_known_words(word, value):
    assert bitview.decode_value(word) == value


def test_decode_nan_and_negative_zero():
    assert math.isnan(bitview.decode_value(0x7FC00001))
    z = bitview.decode_value(0x80000000)
    assert z == 0.0 and math.copysign(1.0, z) == -1.0


@given(words)
def test_decode_matches_platform_reinterpretation(w):
    got, ref = bitview.decode_value(w), oracles.value_of(w)
    if math.isnan(ref):
        assert math.isnan(got)
    else:
        assert got == ref


@given(words)
def test_word_bits_roundtrip_including_nan_payloads(w):
    assert bitview.bits_to_word(bitview.word_to_bits(w)) == w
    assert bitview.word_to_bits(w) == oracles.bits_of(w)
    arr = np.array([w], dtype=np.uint32)
    assert bitview.as_words(bitview.as_floats(arr))[0] == w


def test_fields():
    w = 0xC0490FDB  # -pi
    assert bitview.sign_bit(w) == 1
    assert bitview.exponent(w) == 128
    assert bitview.mantissa(w) == 0x490FDB


@pytest.mark.parametrize("word, region, expected", [
    (0x00000005, xlsb(3), "101"),
    (0x3F800000, xmsb(8), "01111111"),
    (0x3F800000, xmsb(1), "0"),
    (0x40000000, xmsb(1), "1"),
    (0x007FFFFF, xlsb(23), "1" * 23),
])
def test_read_region_examples(word, region, expected):
    assert bitview.read_region(word, region) == expected


@given(words, st.integers(1, 23))
def test_read_xlsb_matches_oracle(w, x):
    assert bitview.read_region(w, xlsb(x)) == oracles.xlsb_string(w, x)


@given(words, st.integers(1, 8))
def test_read_xmsb_matches_oracle(w, x):
    assert bitview.read_region(w, xmsb(x)) == oracles.xmsb_string(w, x)


@pytest.mark.parametrize("kind, width", [("XLSB", 0), ("XLSB", 24), ("XMSB", 0), ("XMSB", 9)])
def test_region_bounds(kind, width):
    with pytest.raises(bitview.RegionError):
        bitview.BitRegion(kind, width)


def test_write_examples():
    assert bitview.write_region(0x3F800000, xlsb(1), "1") == 0x3F800001
    assert bitview.write_region(0x3F800007, xlsb(3), "000") == 0x3F800000
    # partial write into the top of a width-4 region: b4, b3 only
    assert bitview.write_region(0x3F800000, xlsb(4), "10") == 0x3F800008
    assert bitview.write_region(0x3F80000F, xlsb(4), "01") == 0x3F800007


def test_write_xmsb_is_refused():
    with pytest.raises(bitview.UnsupportedRegionError):
        bitview.write_region(0x3F800000, xmsb(2), "00")


def test_write_too_many_bits():
    with pytest.raises(bitview.RegionError):
        bitview.write_region(0, xlsb(2), "101")


@given(words, st.integers(1, 23), st.data())
def test_write_matches_oracle_and_reads_back(w, x, data):
    k = data.draw(st.integers(0, x))
    bits = data.draw(st.text("01", min_size=k, max_size=k))
    out = bitview.write_region(w, xlsb(x), bits)
    assert out == oracles.paste(w, x, bits)
    assert bitview.read_region(out, xlsb(x))[:k] == bits
    untouched = ((1 << 32) - 1) ^ ((((1 << k) - 1) << (x - k)))
    assert out & untouched == w & untouched
    assert out >> 23 == w >> 23  # sign and exponent


@settings(max_examples=300)
@given(normal_words, st.integers(1, 23), st.data())
def test_write_perturbation_bound(w, x, data):
    bits = data.draw(st.text("01", min_size=x, max_size=x))
    out = bitview.write_region(w, xlsb(x), bits)
    e = bitview.exponent(w)
    delta = abs(oracles.value_of(out) - oracles.value_of(w))
    assert delta < 2.0 ** (e - 127) * 2.0 ** (x - 23)


def _flip_delta(w, i):
    # a flip into the Inf/NaN exponent is an unbounded change
    d = abs(bitview.decode_value(bitview.flip_bit(w, i)) - bitview.decode_value(w))
    return math.inf if math.isnan(d) else d


@given(normal_words, st.integers(1, 22), st.data())
def test_mantissa_significance_is_strict(w, j, data):
    i = data.draw(st.integers(j + 1, 23))
    assert _flip_delta(w, i) > _flip_delta(w, j)


@given(normal_words, st.integers(24, 31), st.integers(1, 23))
def test_exponent_bits_outweigh_mantissa_bits(w, i, j):
    # ties are possible at b24 vs b23 when the mantissa is zero (see below)
    assert _flip_delta(w, i) >= _flip_delta(w, j)


def test_significance_counterexamples():
    # 1.0: clearing b24 halves the value, setting b23 adds one half -> equal change
    assert _flip_delta(0x3F800000, 24) == _flip_delta(0x3F800000, 23) == 0.5
    # 0.5 (E = 126): clearing b25 moves by 0.375 but setting b24 moves by 0.5
    assert _flip_delta(0x3F000000, 25) == 0.375 < _flip_delta(0x3F000000, 24) == 0.5


def test_flip_magnitudes_of_high_and_low_bits():
    small = bitview.float_to_word(2.0 ** -63)
    assert _flip_delta(small, 31) == pytest.approx(3.6893488e19, rel=1e-7)
    assert _flip_delta(bitview.float_to_word(3.0), 1) == pytest.approx(2.384e-7, rel=1e-3)


def test_flip_bit_range():
    with pytest.raises(ValueError):
        bitview.flip_bit(0, 0)
    with pytest.raises(ValueError):
        bitview.flip_bit(0, 33)


@given(st.lists(words, min_size=1, max_size=20))
def test_bit_matrix_roundtrip(ws):
    arr = np.array(ws, dtype=np.uint32)
    m = bitview.unpack_words(arr)
    assert m.shape == (len(ws), 32)
    assert ["".join(map(str, row)) for row in m] == [oracles.bits_of(w) for w in ws]
    assert np.array_equal(bitview.pack_words(m), arr)
    assert list(bitview.exponent_field(arr)) == [(w >> 23) & 0xFF for w in ws]
