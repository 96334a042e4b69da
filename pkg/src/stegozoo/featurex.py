"""Per-model steganalysis features and labeled feature datasets.

Three feature kinds:

``loss``
    autoencoder reconstruction MSE of the z-scored weight vector (1 value)
``grads``
    backprop gradient at an all-zero input (n_W values)
``weights``
    the raw weight vector (n_W values, kept as float32)
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import netcore, tensorstore
from .netcore import Network
from .tensorstore import Arch, ModelRecord, flatten

FEATURE_KINDS = ("loss", "grads", "weights")
LABELS = ("benign", "malicious")


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class AEConfig:
    bottleneck: int | None = None  # None -> max(8, n_W // 8)
    epochs: int = 500
    lr: float = 1e-3
    batch: int = 16
    weight_decay: float = 3e-3
    optimizer: str = "adam"
    activation: str = "tanh"

    def width(self, n_w: int) -> int:
        return self.bottleneck or max(8, n_w // 8)


@dataclass(frozen=True, eq=False)
class AutoencoderModel:
    network: Network
    mean: np.ndarray
    std: np.ndarray
    history: tuple[float, ...] = ()

    @property
    def n_w(self) -> int:
        return self.network.arch.sizes[0]

    def normalize(self, w: np.ndarray) -> np.ndarray:
        return (np.asarray(w, dtype=np.float64) - self.mean) / self.std

    def to_record(self) -> ModelRecord:
        meta = {
            "kind": "autoencoder",
            "norm_mean": ",".join(repr(float(v)) for v in self.mean),
            "norm_std": ",".join(repr(float(v)) for v in self.std),
        }
        return self.network.record.with_meta(**meta)

    @classmethod
    def from_record(cls, record: ModelRecord) -> "AutoencoderModel":
        if record.meta.get("kind") != "autoencoder":
            raise FeatureError("model record is not an autoencoder checkpoint")
        mean = np.array([float(v) for v in record.meta["norm_mean"].split(",")], dtype=np.float32)
        std = np.array([float(v) for v in record.meta["norm_std"].split(",")], dtype=np.float32)
        meta = {k: v for k, v in record.meta.items() if k not in ("kind", "norm_mean", "norm_std")}
        return cls(Network(tensorstore.from_tensors(record.arch, [t for _, t in record.layers], meta)), mean, std)

    def save(self, path) -> None:
        tensorstore.save(self.to_record(), path)

    @classmethod
    def load(cls, path) -> "AutoencoderModel":
        return cls.from_record(tensorstore.load(path))


def _weight_matrix(models: list[ModelRecord]) -> np.ndarray:
    archs = {m.arch for m in models}
    if len(archs) != 1:
        raise FeatureError(f"models do not share one architecture: {sorted(map(str, archs))}")
    return np.stack([flatten(m) for m in models])


def train_autoencoder(models: list[ModelRecord], config: AEConfig = AEConfig(), seed: int = 0) -> AutoencoderModel:
    """Fit an n_W -> h -> n_W autoencoder on benign models' z-scored weights."""
    if len(models) < 10:
        raise FeatureError(f"autoencoder training needs at least 10 models, got {len(models)}")
    W = _weight_matrix(models).astype(np.float64)
    if not np.all(np.isfinite(W)):
        raise FeatureError("non-finite weights in autoencoder training set")
    mean = W.mean(axis=0).astype(np.float32)
    std = W.std(axis=0).astype(np.float32)
    std[~(std > 0)] = 1.0
    n_w = W.shape[1]
    arch = Arch((n_w, config.width(n_w), n_w), (config.activation, "identity"))
    z = (W - mean) / std
    net = Network.init(arch, seed)
    result = netcore.train_sgd(
        net, z, z, config.epochs, config.lr, config.batch, seed,
        loss="mse", optimizer=config.optimizer, weight_decay=config.weight_decay,
    )
    return AutoencoderModel(result.network, mean, std, tuple(result.history))


def reconstruction_loss(ae: AutoencoderModel, m: ModelRecord) -> float:
    """Mean squared error between the normalized weights and their reconstruction."""
    w = flatten(m)
    if w.size != ae.n_w:
        raise FeatureError(f"model has {w.size} weights, autoencoder expects {ae.n_w}")
    z = ae.normalize(w)
    return float(np.mean((netcore.forward(ae.network, z) - z) ** 2))


def gradient_feature(m: ModelRecord, target: str = "zeros") -> np.ndarray:
    """Backprop gradient for an all-zero input, mse loss, in weight-vector order.

    ``target`` is ``"zeros"`` (default) or ``"uniform"`` (1/k on every output).
    """
    net = Network(m)
    k = m.arch.sizes[-1]
    if target == "zeros":
        t = np.zeros(k)
    elif target == "uniform":
        t = np.full(k, 1.0 / k)
    else:
        raise FeatureError(f"unknown gradient target {target!r}")
    try:
        g = netcore.backprop(net, np.zeros(m.arch.sizes[0]), t, loss="mse")
    except netcore.NumericError as exc:
        raise netcore.NumericError(f"model {m.meta.get('model_id', '?')}: {exc}") from None
    if not np.all(np.isfinite(g)):
        raise netcore.NumericError(f"model {m.meta.get('model_id', '?')}: non-finite gradient")
    return g


def weights_feature(m: ModelRecord) -> np.ndarray:
    return flatten(m).copy()


@dataclass(eq=False)
class FeatureDataset:
    kind: str
    model_ids: list[str]
    labels: np.ndarray  # 0 benign, 1 malicious
    x_lsb: np.ndarray
    features: np.ndarray  # (rows, d)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.x_lsb = np.asarray(self.x_lsb, dtype=np.int64)
        self.features = np.asarray(self.features)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        n = len(self.model_ids)
        if not (self.labels.shape == self.x_lsb.shape == (n,) and self.features.shape[0] == n):
            raise FeatureError("dataset columns have inconsistent lengths")

    def __len__(self) -> int:
        return len(self.model_ids)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "FeatureDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return FeatureDataset(
            self.kind, [self.model_ids[i] for i in rows], self.labels[rows],
            self.x_lsb[rows], self.features[rows], dict(self.meta),
        )

    def equals(self, other: "FeatureDataset") -> bool:
        """Bit-exact equality, NaN payloads included."""
        return (
            self.kind == other.kind
            and self.model_ids == other.model_ids
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.x_lsb, other.x_lsb)
            and self.features.dtype == other.features.dtype
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
        )


def _extract(kind: str, models: list[ModelRecord], ae: AutoencoderModel | None, grad_target: str) -> np.ndarray:
    if kind == "loss":
        return np.array([[reconstruction_loss(ae, m)] for m in models], dtype=np.float64)
    if kind == "grads":
        return np.stack([gradient_feature(m, grad_target) for m in models])
    return np.stack([weights_feature(m) for m in models])


def build_dataset(
    benign: list[ModelRecord],
    attacked: list[ModelRecord],
    kind: str,
    ae: AutoencoderModel | None = None,
    grad_target: str = "zeros",
) -> FeatureDataset:
    """One row per model: benign rows first, then attacked rows, each in zoo order."""
    if kind not in FEATURE_KINDS:
        raise FeatureError(f"unknown feature kind {kind!r}; expected one of {FEATURE_KINDS}")
    if kind == "loss" and ae is None:
        raise FeatureError("the loss feature needs a trained autoencoder")
    models = list(benign) + list(attacked)
    if {m.arch for m in models} != {benign[0].arch}:
        raise FeatureError("benign and attacked zoos do not share one architecture")
    ids = [m.meta.get("model_id", str(i)) for i, m in enumerate(models)]
    labels = [0] * len(benign) + [1] * len(attacked)
    x_lsb = [0] * len(benign) + [int(m.meta.get("x_lsb", 0)) for m in attacked]
    return FeatureDataset(kind, ids, labels, x_lsb, _extract(kind, models, ae, grad_target))


def split_benign(model_ids: list[str], frac: float, seed: int) -> list[str]:
    """Deterministic training subset of benign model ids (by sorted id)."""
    ids = sorted(set(model_ids))
    rng = np.random.default_rng(seed)
    n_train = int(round(frac * len(ids)))
    picked = rng.permutation(len(ids))[:n_train]
    return sorted(ids[i] for i in picked)


# CSV I/O. Finite values are written with repr() (shortest exact decimal);
# NaNs carry their raw bits as nan:0x<hex> so payload patterns survive.

def _format(v, dtype) -> str:
    f = float(v)
    if np.isnan(f):
        if dtype == np.float32:
            return "nan:0x%08x" % np.float32(v).view(np.uint32)
        return "nan:0x%016x" % np.float64(v).view(np.uint64)
    return repr(f)


def _parse(token: str, dtype):
    if token.startswith("nan:0x"):
        bits = int(token[6:], 16)
        if dtype == np.float32:
            return np.uint32(bits).view(np.float32)
        return np.uint64(bits).view(np.float64)
    return dtype(float(token))


def _sidecar(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def write_csv(ds: FeatureDataset, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dtype = ds.features.dtype.type
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model_id", "label", "x_lsb"] + [f"f{i}" for i in range(ds.dim)])
        for i in range(len(ds)):
            writer.writerow(
                [ds.model_ids[i], LABELS[ds.labels[i]], int(ds.x_lsb[i])]
                + [_format(v, dtype) for v in ds.features[i]]
            )
    side = {"kind": ds.kind, "dtype": np.dtype(dtype).name, "rows": len(ds), "dim": ds.dim, "meta": ds.meta}
    _sidecar(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def read_csv(path: str | os.PathLike, kind: str | None = None, dtype=None) -> FeatureDataset:
    path = Path(path)
    meta = {}
    side = _sidecar(path)
    if side.exists():
        info = json.loads(side.read_text())
        kind = kind or info["kind"]
        dtype = dtype or np.dtype(info["dtype"]).type
        meta = info.get("meta", {})
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[:3] != ["model_id", "label", "x_lsb"]:
        raise FeatureError(f"{path}: unexpected header {header[:3]}")
    if dtype is None:
        narrow = any(t.startswith("nan:0x") and len(t) == 14 for r in body for t in r[3:])
        dtype = np.float32 if narrow else np.float64
    feats = np.array([[_parse(t, dtype) for t in r[3:]] for r in body], dtype=dtype)
    feats = feats.reshape(len(body), len(header) - 3)
    return FeatureDataset(
        kind or path.stem.split("_")[0],
        [r[0] for r in body],
        [LABELS.index(r[1]) for r in body],
        [int(r[2]) for r in body],
        feats,
        meta,
    )
