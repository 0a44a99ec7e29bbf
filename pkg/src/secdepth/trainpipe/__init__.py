from .config import ConfigError, DatasetConfig, TrainConfig
from .metrics import METRIC_KEYS, MetricsRecord, compute_errors
from .trainer import (
    CSV_HEADER,
    Adam,
    AugOptions,
    Trainer,
    TrainingAborted,
    evaluate,
    evaluate_by_weather,
    train_step_aug,
    train_step_clean,
)

__all__ = [
    "ConfigError", "DatasetConfig", "TrainConfig", "METRIC_KEYS", "MetricsRecord",
    "compute_errors", "CSV_HEADER", "Adam", "AugOptions", "Trainer", "TrainingAborted",
    "evaluate", "evaluate_by_weather", "train_step_aug", "train_step_clean",
]
