"""Bit-level view of IEEE-754 float32 words.

Bits are numbered b32 (sign) down to b1 (last mantissa bit). A word is held as
a plain ``int`` in ``[0, 2**32)``; the array helpers work on ``numpy.uint32``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

MANTISSA_BITS = 23
EXPONENT_BITS = 8
EXPONENT_BIAS = 127
WORD_MASK = 0xFFFFFFFF


class RegionError(ValueError):
    """Region width outside the range allowed for its kind."""


class UnsupportedRegionError(ValueError):
    """Operation not permitted on this region kind."""


@dataclass(frozen=True)
class BitRegion:
    kind: str  # "XLSB" or "XMSB"
    width: int

    def __post_init__(self):
        if self.kind not in ("XLSB", "XMSB"):
            raise RegionError(f"unknown region kind {self.kind!r}")
        limit = MANTISSA_BITS if self.kind == "XLSB" else EXPONENT_BITS
        if not isinstance(self.width, (int, np.integer)) or not 1 <= self.width <= limit:
            raise RegionError(f"{self.kind} width must be in [1, {limit}], got {self.width!r}")

    @property
    def shift(self) -> int:
        """Position of the region's lowest bit counted from b1 (zero-based)."""
        if self.kind == "XLSB":
            return 0
        return 31 - self.width

    @property
    def mask(self) -> int:
        return ((1 << self.width) - 1) << self.shift


def xlsb(width: int) -> BitRegion:
    return BitRegion("XLSB", width)


def xmsb(width: int) -> BitRegion:
    return BitRegion("XMSB", width)


def _check_word(w: int) -> int:
    w = int(w)
    if not 0 <= w <= WORD_MASK:
        raise ValueError(f"not a 32-bit word: {w:#x}")
    return w


def sign_bit(w: int) -> int:
    return (_check_word(w) >> 31) & 1


def exponent(w: int) -> int:
    """The biased exponent E = (b31...b24)_2."""
    return (_check_word(w) >> MANTISSA_BITS) & 0xFF


def mantissa(w: int) -> int:
    return _check_word(w) & ((1 << MANTISSA_BITS) - 1)


def decode_value(w: int) -> float:
    """Value of a float32 word computed from its sign, exponent and mantissa fields.

    Normalized words use ``(-1)**s * 2**(E-127) * (1 + sum(b_(24-i) * 2**-i))``;
    subnormals, infinities and NaNs follow IEEE-754.
    """
    s, e, m = sign_bit(w), exponent(w), mantissa(w)
    sign = -1.0 if s else 1.0
    if e == 0xFF:
        return math.nan if m else sign * math.inf
    fraction = math.fsum(
        ((m >> (MANTISSA_BITS - i)) & 1) * 2.0 ** -i for i in range(1, MANTISSA_BITS + 1)
    )
    if e == 0:
        return sign * 2.0 ** (1 - EXPONENT_BIAS) * fraction
    return sign * 2.0 ** (e - EXPONENT_BIAS) * (1.0 + fraction)


def float_to_word(v: float) -> int:
    """Round ``v`` to float32 and return its bit pattern."""
    return struct.unpack("<I", struct.pack("<f", v))[0]


def word_to_float(w: int) -> float:
    """Reinterpret a word as float32 (via the platform, not the field formula)."""
    return struct.unpack("<f", struct.pack("<I", _check_word(w)))[0]


def word_to_bits(w: int) -> str:
    """All 32 bits, b32 first."""
    return format(_check_word(w), "032b")


def bits_to_word(bits: str) -> int:
    if len(bits) != 32 or set(bits) - {"0", "1"}:
        raise ValueError("expected a 32-character bit string")
    return int(bits, 2)


def read_region(w: int, region: BitRegion) -> str:
    """Bits of ``region`` in ``w``, most significant region bit first."""
    w = _check_word(w)
    value = (w & region.mask) >> region.shift
    return format(value, f"0{region.width}b")


def write_region(w: int, region: BitRegion, bits: str) -> int:
    """Overwrite the top ``len(bits)`` positions of an XLSB region.

    A partial write of k bits into a width-X region replaces b_X ... b_(X-k+1)
    and leaves every other bit of ``w`` untouched.
    """
    if region.kind != "XLSB":
        raise UnsupportedRegionError("only XLSB regions may be written")
    w = _check_word(w)
    k = len(bits)
    if k > region.width:
        raise RegionError(f"{k} bits do not fit a width-{region.width} region")
    if set(bits) - {"0", "1"}:
        raise ValueError(f"not a bit string: {bits!r}")
    if k == 0:
        return w
    shift = region.width - k
    mask = ((1 << k) - 1) << shift
    return (w & ~mask & WORD_MASK) | (int(bits, 2) << shift)


def flip_bit(w: int, position: int) -> int:
    """Flip b_position (1-based, b1 = last mantissa bit)."""
    if not 1 <= position <= 32:
        raise ValueError(f"bit position must be in [1, 32], got {position}")
    return _check_word(w) ^ (1 << (position - 1))


# Vectorized helpers over uint32 arrays.

def as_words(values: np.ndarray) -> np.ndarray:
    """Reinterpret a float32 array as uint32 words (copy, no rounding)."""
    return np.ascontiguousarray(values, dtype=np.float32).view(np.uint32).copy()


def as_floats(words: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(words, dtype=np.uint32).view(np.float32).copy()


def unpack_words(words: np.ndarray) -> np.ndarray:
    """(n,) uint32 -> (n, 32) uint8 bit matrix; column 0 is b32, column 31 is b1."""
    words = np.ascontiguousarray(words, dtype=">u4")
    return np.unpackbits(words.view(np.uint8).reshape(-1, 4), axis=1)


def pack_words(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 2 or bits.shape[1] != 32:
        raise ValueError(f"bit matrix must have shape (n, 32), got {bits.shape}")
    packed = np.packbits(bits, axis=1)
    return packed.view(">u4").ravel().astype(np.uint32)


def exponent_field(words: np.ndarray) -> np.ndarray:
    return ((np.asarray(words, dtype=np.uint32) >> MANTISSA_BITS) & 0xFF).astype(np.int64)
