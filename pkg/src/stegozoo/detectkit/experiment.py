"""Severity sweeps: fit a detector per attack level and score it.

Two protocols:

* unsupervised (``mean_eps``): the threshold is fitted on a fixed 70% of the
  benign models only; the test set is the remaining benign models plus every
  attacked model of the level.
* supervised (``rf``, ``gb``, ``hgb``): benign and attacked rows are split
  80/20 per class. The split depends only on the seed, so every level uses the
  same model ids for training.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..featurex import FeatureDataset, split_benign
from . import metrics
from .threshold import ThresholdDetector, fit_threshold
from .trees import VARIANTS, TreeEnsemble, fit_ensemble

METHODS = ("mean_eps",) + VARIANTS
LEVELS = tuple(range(1, 24))
CSV_COLUMNS = ("feature", "method", "x_lsb", "A", "R", "P", "F1", "seed")


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class EvalRow:
    feature: str
    method: str
    x_lsb: int
    A: float
    R: float
    P: float
    F1: float
    seed: int
    n_train: int = 0
    n_test: int = 0
    warning: bool = False


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def by_level(self, metric: str = "F1") -> dict[int, float]:
        return {r.x_lsb: getattr(r, metric) for r in self.rows}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.feature, r.method, r.x_lsb, repr(r.A), repr(r.R), repr(r.P), repr(r.F1), r.seed])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader))
        if header != CSV_COLUMNS:
            raise ExperimentError(f"unexpected report header {header}")
        rows = []
        for rec in reader:
            f, m, x, a, r, p, f1, s = rec
            rows.append(EvalRow(f, m, int(x), float(a), float(r), float(p), float(f1), int(s)))
        return cls(rows)

    def write(self, path: str | os.PathLike) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())

    @classmethod
    def read(cls, path: str | os.PathLike) -> "EvalReport":
        return cls.from_csv(Path(path).read_text())

    def table(self) -> str:
        lines = [f"{'feature':<8} {'method':<8} {'X':>3} {'A':>6} {'R':>6} {'P':>6} {'F1':>6} {'train':>6} {'test':>5}"]
        for r in self.rows:
            flag = "  (no eps met alpha)" if r.warning else ""
            lines.append(
                f"{r.feature:<8} {r.method:<8} {r.x_lsb:>3} {r.A:6.3f} {r.R:6.3f} {r.P:6.3f} {r.F1:6.3f} "
                f"{r.n_train:>6} {r.n_test:>5}{flag}"
            )
        return "\n".join(lines)


def predict(detector, features: np.ndarray) -> np.ndarray:
    if isinstance(detector, ThresholdDetector):
        return detector.predict(features)
    if isinstance(detector, TreeEnsemble):
        return detector.predict(features)
    raise TypeError(f"unknown detector type {type(detector).__name__}")


def evaluate(detector, dataset: FeatureDataset) -> metrics.Scores:
    if len(dataset) == 0:
        raise ExperimentError("empty test set")
    return metrics.confusion(dataset.labels, predict(detector, dataset.features))


def fit_detector(method: str, train: FeatureDataset, seed: int, params: dict | None = None):
    if method == "mean_eps":
        if train.dim != 1:
            raise ExperimentError(f"MEAN+eps needs a 1-D feature, {train.kind} has {train.dim} dimensions")
        if np.any(train.labels != 0):
            raise ExperimentError("threshold fitting must only see benign rows")
        return fit_threshold(train.features[:, 0], **(params or {}))
    if method in VARIANTS:
        return fit_ensemble(train.features, train.labels, method, params, seed)
    raise ExperimentError(f"unknown method {method!r}; expected one of {METHODS}")


def unsupervised_split(ds: FeatureDataset, benign_train_ids) -> tuple[np.ndarray, np.ndarray]:
    """Rows of the benign training ids, and the rest (held-out benign + all attacked)."""
    chosen = set(benign_train_ids)
    is_train = np.array([lab == 0 and mid in chosen for mid, lab in zip(ds.model_ids, ds.labels)])
    if not is_train.any():
        raise ExperimentError("none of the benign training ids occur in the dataset")
    return np.nonzero(is_train)[0], np.nonzero(~is_train)[0]


def supervised_split(ds: FeatureDataset, seed: int, train_frac: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Per-class split keyed by model id, so it is identical for every level."""
    train, test = [], []
    for label in (0, 1):
        rows = np.nonzero(ds.labels == label)[0]
        rows = rows[np.argsort([ds.model_ids[i] for i in rows], kind="stable")]
        perm = np.random.default_rng([seed, label]).permutation(rows.size)
        n_train = int(round(train_frac * rows.size))
        train.append(rows[perm[:n_train]])
        test.append(rows[perm[n_train:]])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def run_level(
    ds: FeatureDataset,
    method: str,
    seed: int,
    benign_train_ids=None,
    params: dict | None = None,
) -> tuple[EvalRow, object]:
    attacked_levels = set(ds.x_lsb[ds.labels == 1].tolist())
    if len(attacked_levels) != 1:
        raise ExperimentError(f"dataset mixes attack levels {sorted(attacked_levels)}")
    x = attacked_levels.pop()
    if method == "mean_eps":
        if benign_train_ids is None:
            benign = [m for m, lab in zip(ds.model_ids, ds.labels) if lab == 0]
            benign_train_ids = split_benign(benign, 0.7, seed)
        tr, te = unsupervised_split(ds, benign_train_ids)
    else:
        tr, te = supervised_split(ds, seed)
    det = fit_detector(method, ds.subset(tr), seed, params)
    s = evaluate(det, ds.subset(te)).as_dict()
    warning = bool(getattr(det, "warning", False))
    row = EvalRow(ds.kind, method, int(x), s["A"], s["R"], s["P"], s["F1"], int(seed), int(tr.size), int(te.size), warning)
    return row, det


def run_experiment(
    datasets: dict[int, FeatureDataset],
    method: str,
    seed: int,
    levels=LEVELS,
    benign_train_ids=None,
    params: dict | None = None,
) -> EvalReport:
    """One report row per attack level, in level order."""
    missing = [x for x in levels if x not in datasets]
    if missing:
        raise ExperimentError(f"missing datasets for attack levels {missing}")
    report = EvalReport()
    for x in levels:
        row, _ = run_level(datasets[x], method, seed, benign_train_ids, params)
        report.rows.append(row)
    return report


def mean_by_level(reports: list[EvalReport], metric: str = "F1") -> dict[int, float]:
    """Average a metric over several (e.g. per-seed) reports, per level."""
    acc: dict[int, list[float]] = {}
    for rep in reports:
        for x, v in rep.by_level(metric).items():
            acc.setdefault(x, []).append(v)
    return {x: float(np.mean(v)) for x, v in sorted(acc.items())}


def compare(reports: list[EvalReport], metric: str = "F1") -> tuple[list[str], list[list]]:
    """Outer-join reports on attack level; one column per feature/method/seed."""
    columns, values = [], {}
    for rep in reports:
        for r in rep.rows:
            key = f"{r.feature}/{r.method}/s{r.seed}"
            if key not in columns:
                columns.append(key)
            values[(r.x_lsb, key)] = getattr(r, metric)
    levels = sorted({x for x, _ in values})
    table = [[x] + [values.get((x, c)) for c in columns] for x in levels]
    return ["x_lsb"] + columns, table


def format_compare(header: list[str], table: list[list]) -> str:
    width = max(10, *(len(h) for h in header[1:])) if len(header) > 1 else 10
    lines = ["x_lsb " + " ".join(f"{h:>{width}}" for h in header[1:])]
    for row in table:
        cells = ["-" if v is None else f"{v:.3f}" for v in row[1:]]
        lines.append(f"{row[0]:>5} " + " ".join(f"{c:>{width}}" for c in cells))
    return "\n".join(lines)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def plot_svg(reports: list[EvalReport], metric: str = "F1", title: str = "") -> str:
    """Static line chart of a metric against attack level; one line per feature/method."""
    series: dict[str, dict[int, list[float]]] = {}
    for rep in reports:
        for r in rep.rows:
            series.setdefault(f"{r.feature}/{r.method}", {}).setdefault(r.x_lsb, []).append(getattr(r, metric))
    w, h, left, right, top, bottom = 640, 400, 60, 150, 40, 50
    pw, ph = w - left - right, h - top - bottom

    def sx(x):
        return left + (x - 1) / 22 * pw

    def sy(v):
        return top + (1 - v) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
        f'<text x="{left + pw / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">'
        f'{title or metric + " by number of attacked LSBs"}</text>',
    ]
    for k in range(6):
        v = k / 5
        out.append(f'<line x1="{left}" y1="{sy(v):.1f}" x2="{left + pw}" y2="{sy(v):.1f}" stroke="#dddddd"/>')
        out.append(f'<text x="{left - 8}" y="{sy(v) + 4:.1f}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="11">{v:.1f}</text>')
    for x in (1, 4, 8, 12, 16, 20, 23):
        out.append(f'<text x="{sx(x):.1f}" y="{top + ph + 18}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{x}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{h - 10}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12">X (LSBs overwritten)</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{metric}</text>')
    for i, (name, pts) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        xy = " ".join(f"{sx(x):.1f},{sy(float(np.mean(v))):.1f}" for x, v in sorted(pts.items()))
        out.append(f'<polyline points="{xy}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = top + 14 + 18 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 36}" y="{ly + 4}" font-family="sans-serif" font-size="11">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def row_dicts(report: EvalReport) -> list[dict]:
    return [asdict(r) for r in report.rows]
