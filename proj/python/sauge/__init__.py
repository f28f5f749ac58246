"""SAUGE multi-granularity edge detection."""

import json

from ._sauge import (
    ConfigError,
    DimensionError,
    InputError,
    LoadError,
    Model,
    TrainingError,
    balanced_bce,
    base_parameter_count,
    blend,
    build_ladder,
    differ_loss,
    nms_thin,
    sample_consensus,
    sweep_alphas,
    total_loss,
)
from ._sauge import _evaluate
from ._sauge import train as _train

__all__ = [
    "ConfigError",
    "DimensionError",
    "InputError",
    "LoadError",
    "Model",
    "TrainingError",
    "balanced_bce",
    "base_parameter_count",
    "blend",
    "build_ladder",
    "differ_loss",
    "evaluate",
    "nms_thin",
    "sample_consensus",
    "sweep_alphas",
    "total_loss",
    "train",
]


def evaluate(predictions, annotations, tolerance=0.0075, thresholds=99, nms=True, workers=1):
    """ODS/OIS/AP report as a dict.

    `predictions` holds one probability map per image, or one list of candidate
    maps per image for best-match scoring.
    """
    candidates = [p if isinstance(p, (list, tuple)) else [p] for p in predictions]
    return json.loads(_evaluate(candidates, annotations, tolerance, thresholds, nms, workers))


def train(config, data, out):
    """Trains from a manifest or dataset directory; returns (step losses, last checkpoint path)."""
    return _train({k: str(v) for k, v in config.items()}, str(data), str(out))
