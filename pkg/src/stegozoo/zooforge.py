"""Desk-scale model zoos and their attacked counterparts.

A zoo is a set of small MLPs sharing one architecture, each trained on its own
sample of a fixed Gaussian-blob classification task. Directory layout::

    <zoo>/manifest.json
    <zoo>/benign/<id>.mzw
    <zoo>/attacked/x<X>/<id>.mzw
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import netcore, stegattack, tensorstore
from .tensorstore import Arch, ModelRecord

log = logging.getLogger(__name__)


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class BlobTask:
    """Gaussian blobs in the plane; centers are fixed by ``seed``, samples per model."""

    n_classes: int = 2
    spread: float = 1.0
    samples: int = 200
    radius: float = 3.0
    seed: int = 0

    def centers(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        phase = rng.uniform(0, 2 * np.pi)
        angles = phase + 2 * np.pi * np.arange(self.n_classes) / self.n_classes
        return self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)

    def sample(self, seed: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(seed)
        y = rng.integers(0, self.n_classes, self.samples)
        x = self.centers()[y] + rng.normal(0.0, self.spread, (self.samples, 2))
        return x, y


@dataclass(frozen=True)
class ZooManifest:
    zoo_id: str = "zoo"
    arch: str = "2-8-8-2"
    hidden_activation: str = "tanh"
    count: int = 200
    seed: int = 0
    task: BlobTask = field(default_factory=BlobTask)
    epochs: int = 50
    max_epochs: int = 400
    lr: float = 0.05
    batch: int = 16
    accuracy_floor: float = 0.9
    # "shared": one base init drawn from `seed`, plus per-model noise of
    # init_jitter * fan-in bound; "independent": a fresh init per model.
    init_mode: str = "shared"
    init_jitter: float = 0.05
    seeds: tuple[int, ...] = ()
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.count < 2:
            raise ValueError(f"a zoo needs at least 2 models, got {self.count}")
        if self.init_mode not in ("shared", "independent"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        arch = self.architecture()
        if arch.sizes[0] != 2:
            raise ValueError("blob task inputs are 2-D; the first layer width must be 2")
        if self.task.n_classes != arch.sizes[-1]:
            object.__setattr__(self, "task", replace(self.task, n_classes=arch.sizes[-1]))
        if not self.seeds:
            object.__setattr__(self, "seeds", tuple(self.seed * 1_000_000 + i for i in range(self.count)))
        seeds = tuple(int(s) for s in self.seeds)
        if len(seeds) != self.count or len(set(seeds)) != self.count:
            raise ValueError("need one distinct seed per model")
        object.__setattr__(self, "seeds", seeds)

    def architecture(self) -> Arch:
        return Arch.parse(self.arch, hidden=self.hidden_activation, output="softmax")

    def model_id(self, i: int) -> str:
        return f"{self.zoo_id}-{i:04d}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ZooManifest":
        d = dict(d)
        d["task"] = BlobTask(**d.get("task", {}))
        d["seeds"] = tuple(d.get("seeds", ()))
        return cls(**d)


def _initial_network(manifest: ZooManifest, seed: int) -> netcore.Network:
    arch = manifest.architecture()
    if manifest.init_mode == "independent":
        return netcore.Network.init(arch, seed)
    base = netcore.Network.init(arch, manifest.seed).params64()
    rng = np.random.default_rng([seed, 1])
    params = []
    for W, b in base:
        bound = manifest.init_jitter / np.sqrt(W.shape[1])
        params.append((W + rng.uniform(-bound, bound, W.shape), b + rng.uniform(-bound, bound, b.shape)))
    return netcore.Network.from_params(arch, params)


def train_member(manifest: ZooManifest, index: int) -> ModelRecord:
    """Train the ``index``-th model of the zoo; raises if it misses the accuracy floor."""
    seed = manifest.seeds[index]
    arch = manifest.architecture()
    x, y = manifest.task.sample(seed)
    net = _initial_network(manifest, seed)

    def stop(current, epoch):
        return epoch >= manifest.epochs and netcore.accuracy(current, x, y) >= manifest.accuracy_floor

    result = netcore.train_sgd(
        net, x, netcore.one_hot(y, arch.sizes[-1]), manifest.max_epochs, manifest.lr,
        manifest.batch, seed, loss="cross_entropy", stop=stop,
    )
    acc = netcore.accuracy(result.network, x, y)
    if acc < manifest.accuracy_floor:
        raise GenerationError(
            f"model seed {seed} reached accuracy {acc:.3f} < floor {manifest.accuracy_floor} "
            f"after {result.epochs} epochs"
        )
    meta = {
        "label": "benign",
        "zoo": manifest.zoo_id,
        "model_id": manifest.model_id(index),
        "seed": str(seed),
        "train_accuracy": repr(acc),
    }
    return result.network.record.with_meta(**meta)


def _train_job(args):
    return train_member(*args)


def generate_zoo(manifest: ZooManifest, jobs: int = 1) -> list[ModelRecord]:
    jobs = max(1, int(jobs))
    work = [(manifest, i) for i in range(manifest.count)]
    if jobs == 1:
        return [_train_job(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_train_job, work))


def attack_zoo(zoo: list[ModelRecord], x: int, payload: stegattack.Payload) -> list[ModelRecord]:
    """X-LSB-Attack-Fill with one payload on every model; the input zoo is not modified."""
    stegattack.check_x(x)
    if len(payload) == 0:
        raise ValueError("attack payload must be non-empty")
    return [stegattack.embed_fill(m, x, payload) for m in zoo]


def unchanged_fractions(benign: list[ModelRecord], attacked: list[ModelRecord]) -> np.ndarray:
    """Per-model fraction of weights left bit-identical by the attack."""
    return np.array([stegattack.count_unchanged(b, a) / b.n_params for b, a in zip(benign, attacked)])


# On-disk zoo layout

def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_manifest(manifest: ZooManifest, root: str | os.PathLike) -> None:
    _write_json(Path(root) / "manifest.json", manifest.to_dict())


def load_manifest(root: str | os.PathLike) -> ZooManifest:
    return ZooManifest.from_dict(json.loads((Path(root) / "manifest.json").read_text()))


def save_models(models: list[ModelRecord], directory: str | os.PathLike) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for m in models:
        tensorstore.save(m, directory / f"{m.meta['model_id']}.mzw")


def load_models(directory: str | os.PathLike) -> list[ModelRecord]:
    paths = sorted(Path(directory).glob("*.mzw"))
    if not paths:
        raise FileNotFoundError(f"no .mzw models in {directory}")
    return [tensorstore.load(p) for p in paths]


def benign_dir(root) -> Path:
    return Path(root) / "benign"


def attacked_dir(root, x: int) -> Path:
    return Path(root) / "attacked" / f"x{x}"


def attacked_levels(root) -> list[int]:
    base = Path(root) / "attacked"
    if not base.is_dir():
        return []
    return sorted(int(p.name[1:]) for p in base.iterdir() if p.is_dir() and p.name[1:].isdigit())
