"""Bit-exact model container and the MZW1 file format.

MZW1 layout::

    b"MZW1" | u32 LE header length | UTF-8 JSON header | raw LE float32 data

The header lists ``arch``, ``tensors`` (name, shape, dtype, in data order) and
``meta``. Tensor data follows in header order with no padding.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import bitview

MAGIC = b"MZW1"
ACTIVATIONS = ("identity", "relu", "tanh", "sigmoid", "softmax")


class ShapeError(ValueError):
    pass


class FormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Arch:
    """Dense feedforward architecture: layer widths L0..Lk and one activation per layer."""

    sizes: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.sizes) < 2 or any(s < 1 for s in self.sizes):
            raise ShapeError(f"need at least two positive layer sizes, got {self.sizes}")
        if len(self.activations) != len(self.sizes) - 1:
            raise ShapeError(
                f"{len(self.sizes) - 1} layers need as many activations, got {len(self.activations)}"
            )
        for i, act in enumerate(self.activations):
            if act not in ACTIVATIONS:
                raise ShapeError(f"unknown activation {act!r}")
            if act == "softmax" and i != len(self.activations) - 1:
                raise ShapeError("softmax is only allowed on the output layer")

    @classmethod
    def parse(cls, spec: str, hidden: str = "tanh", output: str = "softmax") -> "Arch":
        """Build from a dash-separated size string such as ``"2-8-8-2"``."""
        try:
            sizes = tuple(int(p) for p in spec.strip().split("-"))
        except ValueError:
            raise ShapeError(f"invalid architecture string {spec!r}") from None
        if len(sizes) < 2:
            raise ShapeError(f"invalid architecture string {spec!r}")
        acts = (hidden,) * (len(sizes) - 2) + (output,)
        return cls(sizes, acts)

    def __str__(self) -> str:
        return "-".join(map(str, self.sizes))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def tensor_specs(self) -> list[tuple[str, tuple[int, ...]]]:
        """Names and shapes in flatten order: per layer, weight (out x in) then bias."""
        specs = []
        for i in range(self.n_layers):
            specs.append((f"l{i}.weight", (self.sizes[i + 1], self.sizes[i])))
            specs.append((f"l{i}.bias", (self.sizes[i + 1],)))
        return specs

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.tensor_specs())

    def to_dict(self) -> dict:
        return {"sizes": list(self.sizes), "activations": list(self.activations)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Arch":
        return cls(tuple(d["sizes"]), tuple(d["activations"]))


@dataclass(frozen=True)
class ModelRecord:
    arch: Arch
    layers: tuple[tuple[str, np.ndarray], ...]
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        specs = self.arch.tensor_specs()
        layers = tuple(self.layers)
        if len(layers) != len(specs):
            raise ShapeError(f"expected {len(specs)} tensors for arch {self.arch}, got {len(layers)}")
        frozen = []
        for (name, shape), (got_name, tensor) in zip(specs, layers):
            arr = np.asarray(tensor)
            if got_name != name:
                raise ShapeError(f"tensor {got_name!r} where {name!r} expected")
            if arr.dtype != np.float32:
                raise ShapeError(f"tensor {name!r} has dtype {arr.dtype}, expected float32")
            if arr.shape != shape:
                raise ShapeError(f"tensor {name!r} has shape {arr.shape}, expected {shape}")
            arr = arr.copy()
            arr.flags.writeable = False
            frozen.append((name, arr))
        object.__setattr__(self, "layers", tuple(frozen))
        object.__setattr__(self, "meta", {str(k): str(v) for k, v in dict(self.meta).items()})

    @property
    def n_params(self) -> int:
        return self.arch.n_params

    def tensor(self, name: str) -> np.ndarray:
        for n, t in self.layers:
            if n == name:
                return t
        raise KeyError(name)

    def with_meta(self, **updates) -> "ModelRecord":
        meta = dict(self.meta)
        meta.update({k: str(v) for k, v in updates.items()})
        return ModelRecord(self.arch, self.layers, meta)

    def __eq__(self, other):
        if not isinstance(other, ModelRecord):
            return NotImplemented
        return (
            self.arch == other.arch
            and dict(self.meta) == dict(other.meta)
            and np.array_equal(bitview.as_words(flatten(self)), bitview.as_words(flatten(other)))
        )

    __hash__ = None


def from_tensors(arch: Arch, tensors: Sequence[np.ndarray], meta: Mapping | None = None) -> ModelRecord:
    names = [n for n, _ in arch.tensor_specs()]
    return ModelRecord(arch, tuple(zip(names, tensors)), meta or {})


def flatten(m: ModelRecord) -> np.ndarray:
    """Weight vector W: all tensors concatenated in declared order, row-major."""
    return np.concatenate([t.ravel() for _, t in m.layers]).astype(np.float32, copy=False)


def unflatten(m: ModelRecord, values: np.ndarray, meta: Mapping | None = None) -> ModelRecord:
    """A model with ``m``'s architecture whose weight vector is ``values``."""
    values = np.asarray(values)
    if values.dtype != np.float32:
        raise ShapeError(f"weight vector must be float32, got {values.dtype}")
    if values.shape != (m.n_params,):
        raise ShapeError(f"weight vector has shape {values.shape}, expected ({m.n_params},)")
    layers, pos = [], 0
    for name, shape in m.arch.tensor_specs():
        size = int(np.prod(shape))
        layers.append((name, values[pos:pos + size].reshape(shape)))
        pos += size
    return ModelRecord(m.arch, tuple(layers), dict(m.meta) if meta is None else meta)


def to_bitmatrix(values: np.ndarray) -> np.ndarray:
    """(n_W, 32) uint8 matrix; row i holds the bits of w_i, b32 in column 0."""
    return bitview.unpack_words(bitview.as_words(values))


def from_bitmatrix(bits: np.ndarray) -> np.ndarray:
    return bitview.as_floats(bitview.pack_words(bits))


def _header(m: ModelRecord) -> bytes:
    header = {
        "arch": m.arch.to_dict(),
        "tensors": [{"name": n, "shape": list(t.shape), "dtype": "float32"} for n, t in m.layers],
        "meta": dict(sorted(m.meta.items())),
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def dumps(m: ModelRecord) -> bytes:
    header = _header(m)
    data = b"".join(np.ascontiguousarray(t, dtype="<f4").tobytes() for _, t in m.layers)
    return MAGIC + struct.pack("<I", len(header)) + header + data


def loads(buf: bytes) -> ModelRecord:
    if len(buf) < 8:
        raise FormatError("file too short for MZW1 preamble", len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}", 0)
    (hlen,) = struct.unpack("<I", buf[4:8])
    if 8 + hlen > len(buf):
        raise FormatError(f"header of {hlen} bytes is truncated", len(buf))
    try:
        header = json.loads(buf[8:8 + hlen].decode("utf-8"))
        arch = Arch.from_dict(header["arch"])
        entries = header["tensors"]
        meta = header.get("meta", {})
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed header: {exc}", 8) from None
    pos = 8 + hlen
    tensors = []
    for entry in entries:
        name, shape = entry["name"], tuple(entry["shape"])
        if entry.get("dtype") != "float32":
            raise FormatError(f"tensor {name!r} has unsupported dtype {entry.get('dtype')!r}", pos)
        nbytes = 4 * int(np.prod(shape))
        if pos + nbytes > len(buf):
            raise FormatError(f"tensor {name!r} is truncated", pos)
        arr = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos)
        tensors.append((name, arr.astype(np.float32).reshape(shape)))
        pos += nbytes
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after tensor data", pos)
    try:
        return ModelRecord(arch, tuple(tensors), meta)
    except ShapeError as exc:
        raise FormatError(f"shape mismatch: {exc}", 8) from None


def save(m: ModelRecord, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(m))
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> ModelRecord:
    return loads(Path(path).read_bytes())
