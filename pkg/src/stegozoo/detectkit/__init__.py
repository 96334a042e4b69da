"""Detectors for attacked model zoos and the evaluation protocol around them."""
from .checkpoint import CheckpointError
from .experiment import (
    METHODS,
    EvalReport,
    EvalRow,
    ExperimentError,
    evaluate,
    fit_detector,
    run_experiment,
)
from .metrics import Scores, confusion
from .threshold import ThresholdDetector, classify_threshold, fit_threshold
from .trees import VARIANTS, TreeEnsemble, fit_ensemble

__all__ = [
    "CheckpointError",
    "EvalReport",
    "EvalRow",
    "ExperimentError",
    "METHODS",
    "Scores",
    "ThresholdDetector",
    "TreeEnsemble",
    "VARIANTS",
    "classify_threshold",
    "confusion",
    "evaluate",
    "fit_detector",
    "fit_ensemble",
    "fit_threshold",
    "run_experiment",
]
