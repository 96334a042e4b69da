"""MEAN+eps: flag a sample whose 1-D feature exceeds the benign mean plus a spacer."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

# spacer multipliers of the benign-train standard deviation
DEFAULT_GRID = tuple(0.25 * k for k in range(21))


@dataclass(frozen=True)
class ThresholdDetector:
    mean: float
    eps: float
    warning: bool = False  # no grid value met the false-positive target

    def __post_init__(self):
        if not np.isfinite(self.mean):
            raise ValueError(f"threshold mean must be finite, got {self.mean}")
        if not self.eps >= 0:
            raise ValueError(f"spacer must be non-negative, got {self.eps}")

    @property
    def threshold(self) -> float:
        return self.mean + self.eps

    def predict(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 2:
            if values.shape[1] != 1:
                raise ValueError("MEAN+eps works on one-dimensional features")
            values = values[:, 0]
        return (values > self.threshold).astype(np.int64)


def fit_threshold(values, grid=None, alpha: float = 0.05, scale_by_std: bool = True) -> ThresholdDetector:
    """Choose the smallest spacer whose benign-train false-positive rate is <= alpha.

    ``grid`` holds spacer candidates; with ``scale_by_std`` they are multiples
    of the training standard deviation. If no candidate reaches ``alpha`` the
    largest one is used and the detector carries ``warning=True``.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size < 10:
        raise ValueError(f"need at least 10 benign training values, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise ValueError("benign training values must be finite")
    grid = DEFAULT_GRID if grid is None else tuple(grid)
    if not grid:
        raise ValueError("spacer grid is empty")
    mu = float(np.mean(values))
    unit = float(np.std(values)) if scale_by_std else 1.0
    candidates = sorted(float(g) * unit for g in grid)
    for eps in candidates:
        if np.mean(values > mu + eps) <= alpha:
            return ThresholdDetector(mu, eps)
    log.warning("no spacer reaches false-positive rate %.3f; using the largest", alpha)
    return ThresholdDetector(mu, candidates[-1], warning=True)


def classify_threshold(detector: ThresholdDetector, value: float) -> str:
    return "malicious" if value > detector.threshold else "benign"
