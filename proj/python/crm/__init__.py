"""Cross-sentence relation mining for weakly supervised moment localization."""

import json

from ._crm import (
    ConfigError,
    DataError,
    RunConfig,
    TrainingError,
    bce_loss,
    generate_proposals,
    gradient_check,
    hull,
    iou,
    joint_probability,
    order_relation,
    synth,
    train,
)
from ._crm import evaluate as _evaluate


def evaluate(checkpoint, data_dir, thresholds=(0.3, 0.5, 0.7), split="test", config=None):
    """Evaluation report as a dict."""
    return json.loads(_evaluate(checkpoint, data_dir, list(thresholds), split, config))


__all__ = [
    "ConfigError",
    "DataError",
    "RunConfig",
    "TrainingError",
    "bce_loss",
    "evaluate",
    "generate_proposals",
    "gradient_check",
    "hull",
    "iou",
    "joint_probability",
    "order_relation",
    "synth",
    "train",
]
