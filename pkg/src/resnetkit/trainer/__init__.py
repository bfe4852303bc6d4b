"""Desk-scale training: data pipeline, recipe, evaluation, logging."""

from .data import (
    CIFAR10_MEAN,
    CIFAR10_STD,
    CIFAR100_MEAN,
    CIFAR100_STD,
    DataFormatError,
    Dataset,
    LabeledBatch,
    augment,
    hflip,
    load_cifar,
    sample_crop_offsets,
    synthetic_dataset,
)
from .train import (
    CSV_HEADER,
    EpochRecord,
    TrainConfig,
    TrainHistory,
    TrainResult,
    TrainingDiverged,
    evaluate,
    lr_at,
    train,
)

__all__ = [
    "CIFAR10_MEAN",
    "CIFAR10_STD",
    "CIFAR100_MEAN",
    "CIFAR100_STD",
    "CSV_HEADER",
    "DataFormatError",
    "Dataset",
    "EpochRecord",
    "LabeledBatch",
    "TrainConfig",
    "TrainHistory",
    "TrainResult",
    "TrainingDiverged",
    "augment",
    "evaluate",
    "hflip",
    "load_cifar",
    "lr_at",
    "sample_crop_offsets",
    "synthetic_dataset",
    "train",
]
