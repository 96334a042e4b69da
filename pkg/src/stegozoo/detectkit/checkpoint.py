"""Binary container for trained detectors.

Layout (little-endian)::

    b"SDK1" | u16 version | u32 header length | JSON header | array data

The header names the detector kind and lists the arrays that follow, each as
``{"name", "dtype", "count"}`` in storage order. Floats in the header are
written by ``json`` with ``repr`` precision, so thresholds round-trip exactly.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .threshold import ThresholdDetector
from .trees import Tree, TreeEnsemble

MAGIC = b"SDK1"
VERSION = 1
_DTYPES = {"i32": "<i4", "f64": "<f8"}
_TREE_FIELDS = (("feature", "i32"), ("threshold", "f64"), ("left", "i32"), ("right", "i32"), ("value", "f64"))


class CheckpointError(ValueError):
    pass


def _ensemble_payload(model: TreeEnsemble):
    header = {
        "kind": "ensemble",
        "variant": model.variant,
        "params": model.params,
        "seed": model.seed,
        "base_score": model.base_score,
        "n_features": model.n_features,
        "tree_sizes": [t.n_nodes for t in model.trees],
        "arrays": [],
    }
    blobs = []
    for name, code in _TREE_FIELDS:
        parts = [getattr(t, name) for t in model.trees]
        arr = np.concatenate(parts) if parts else np.zeros(0)
        arr = arr.astype(_DTYPES[code])
        header["arrays"].append({"name": name, "dtype": code, "count": int(arr.size)})
        blobs.append(arr.tobytes())
    return header, blobs


def dumps(detector, info: dict | None = None) -> bytes:
    """Serialize a ThresholdDetector or TreeEnsemble; ``info`` is stored verbatim."""
    if isinstance(detector, ThresholdDetector):
        header = {
            "kind": "threshold",
            "mean": detector.mean,
            "eps": detector.eps,
            "warning": detector.warning,
            "arrays": [],
        }
        blobs = []
    elif isinstance(detector, TreeEnsemble):
        header, blobs = _ensemble_payload(detector)
    else:
        raise TypeError(f"cannot serialize {type(detector).__name__}")
    header["info"] = dict(info or {})
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<HI", VERSION, len(raw)) + raw + b"".join(blobs)


def loads(data: bytes):
    """Inverse of :func:`dumps`; returns ``(detector, info)``."""
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 10:
        raise CheckpointError("truncated checkpoint header")
    version, n = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if len(data) < 10 + n:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[10:10 + n].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    arrays, pos = {}, 10 + n
    for spec in header["arrays"]:
        dtype = np.dtype(_DTYPES[spec["dtype"]])
        size = spec["count"] * dtype.itemsize
        if pos + size > len(data):
            raise CheckpointError(f"array {spec['name']!r} truncated at byte {pos}")
        arrays[spec["name"]] = np.frombuffer(data, dtype=dtype, count=spec["count"], offset=pos).copy()
        pos += size
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes after array data")
    info = header.get("info", {})
    if header["kind"] == "threshold":
        return ThresholdDetector(header["mean"], header["eps"], header["warning"]), info
    if header["kind"] != "ensemble":
        raise CheckpointError(f"unknown detector kind {header['kind']!r}")
    trees, start = [], 0
    for size in header["tree_sizes"]:
        fields = {name: arrays[name][start:start + size] for name, _ in _TREE_FIELDS}
        trees.append(Tree(**fields))
        start += size
    model = TreeEnsemble(
        header["variant"], header["params"], header["seed"], trees, header["base_score"], header["n_features"]
    )
    for t in trees:
        if t.feature.size and t.feature.max() >= model.n_features:
            raise CheckpointError("split feature index exceeds the dataset dimension")
    return model, info


def save(detector, path: str | os.PathLike, info: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(detector, info))
    os.replace(tmp, path)


def load(path: str | os.PathLike):
    return loads(Path(path).read_bytes())
