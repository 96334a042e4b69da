"""X-LSB attack: hide a bit string in the low mantissa bits of every weight.

The weight vector is viewed as an ``(n_W, 32)`` bit matrix. The payload is cut
into X-bit segments; segment k goes into the XLSB region of weight k with its
first bit at b_X. A trailing partial segment of r bits occupies b_X ... b_(X-r+1)
of the next weight. Only uint32 views are touched, never float arithmetic, so
NaN/Inf patterns pass through unchanged.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import bitview
from .tensorstore import ModelRecord, ShapeError, flatten, unflatten

MIN_X, MAX_X = 1, 23


class CapacityError(ValueError):
    def __init__(self, n_bits: int, capacity: int):
        super().__init__(f"payload of {n_bits} bits exceeds capacity n_W*X = {capacity}")
        self.n_bits = n_bits
        self.capacity = capacity


@dataclass(frozen=True, eq=False)
class Payload:
    """An ordered bit sequence; bytes map to bits most significant bit first."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8).ravel().copy()
        if bits.size and bits.max() > 1:
            raise ValueError("payload bits must be 0 or 1")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Payload":
        return cls(np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8)))

    @classmethod
    def from_string(cls, s: str) -> "Payload":
        if set(s) - {"0", "1"}:
            raise ValueError(f"not a bit string: {s!r}")
        return cls(np.frombuffer(s.encode("ascii"), dtype=np.uint8) - ord("0"))

    @classmethod
    def random(cls, n_bytes: int, seed: int) -> "Payload":
        rng = np.random.default_rng(seed)
        return cls.from_bytes(rng.integers(0, 256, n_bytes, dtype=np.uint8).tobytes())

    def to_bytes(self) -> bytes:
        """Pack to bytes; a trailing partial byte is zero-padded on the right."""
        return np.packbits(self.bits).tobytes()

    def __str__(self) -> str:
        return (self.bits + ord("0")).tobytes().decode("ascii")

    def __len__(self) -> int:
        return int(self.bits.size)

    def __eq__(self, other):
        if not isinstance(other, Payload):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    __hash__ = None

    def digest(self) -> str:
        return hashlib.sha256(str(self).encode("ascii")).hexdigest()


def check_x(x: int) -> int:
    if isinstance(x, bool) or not isinstance(x, (int, np.integer)) or not MIN_X <= x <= MAX_X:
        raise ValueError(f"X must be an integer in [{MIN_X}, {MAX_X}], got {x!r}")
    return int(x)


def capacity(m: ModelRecord, x: int) -> int:
    return m.n_params * check_x(x)


def _segment_values(bits: np.ndarray, width: int) -> np.ndarray:
    """Rows of ``width`` bits -> unsigned integers, first bit most significant."""
    weights = np.left_shift(np.uint32(1), np.arange(width - 1, -1, -1, dtype=np.uint32))
    return (bits.astype(np.uint32) * weights).sum(axis=1, dtype=np.uint32)


def embed_words(words: np.ndarray, x: int, bits: np.ndarray) -> np.ndarray:
    """Core of the attack on a uint32 word vector; returns a new vector."""
    x = check_x(x)
    words = np.array(words, dtype=np.uint32)
    bits = np.asarray(bits, dtype=np.uint8)
    n_s = bits.size
    if n_s > words.size * x:
        raise CapacityError(n_s, words.size * x)
    q, r = divmod(n_s, x)
    if q:
        block = bits[:q * x].reshape(q, x)
        mask = np.uint32((1 << x) - 1)
        words[:q] = (words[:q] & ~mask) | _segment_values(block, x)
    if r:
        shift = x - r
        mask = ((1 << r) - 1) << shift
        value = int(_segment_values(bits[q * x:].reshape(1, r), r)[0]) << shift
        words[q] = (int(words[q]) & ~mask & bitview.WORD_MASK) | value
    return words


def extract_words(words: np.ndarray, x: int, n_bits: int) -> np.ndarray:
    x = check_x(x)
    words = np.asarray(words, dtype=np.uint32)
    if n_bits < 0 or n_bits > words.size * x:
        raise CapacityError(n_bits, words.size * x)
    n_words = -(-n_bits // x)
    bits = bitview.unpack_words(words[:n_words])[:, 32 - x:]
    return bits.ravel()[:n_bits]


def _attacked(m: ModelRecord, words: np.ndarray, x: int) -> ModelRecord:
    meta = dict(m.meta)
    meta.update(label="malicious", x_lsb=str(x))
    return unflatten(m, bitview.as_floats(words), meta)


def embed(m: ModelRecord, x: int, payload: Payload) -> ModelRecord:
    """Exact X-LSB attack: fails if the payload does not fit in n_W*X bits."""
    words = embed_words(bitview.as_words(flatten(m)), x, payload.bits)
    return _attacked(m, words, x)


def fill_bits(payload: Payload, n_bits: int) -> np.ndarray:
    """The payload repeated and cut to exactly ``n_bits``."""
    if len(payload) == 0:
        raise ValueError("fill attack needs a non-empty payload")
    return np.resize(payload.bits, n_bits)


def embed_fill(m: ModelRecord, x: int, payload: Payload) -> ModelRecord:
    """Fill variant: repeat the payload until every XLSB bit is used."""
    x = check_x(x)
    bits = fill_bits(payload, m.n_params * x)
    words = embed_words(bitview.as_words(flatten(m)), x, bits)
    return _attacked(m, words, x)


def extract(m: ModelRecord, x: int, n_bits: int) -> Payload:
    """First ``n_bits`` of the concatenated XLSB regions, in embedding order."""
    return Payload(extract_words(bitview.as_words(flatten(m)), x, n_bits))


def _same_arch(a: ModelRecord, b: ModelRecord):
    if a.arch != b.arch:
        raise ShapeError(f"architecture mismatch: {a.arch} vs {b.arch}")


def unchanged_mask(original: ModelRecord, attacked: ModelRecord) -> np.ndarray:
    _same_arch(original, attacked)
    return bitview.as_words(flatten(original)) == bitview.as_words(flatten(attacked))


def count_unchanged(original: ModelRecord, attacked: ModelRecord) -> int:
    """Number of weights whose full 32-bit pattern survived the attack."""
    return int(unchanged_mask(original, attacked).sum())
