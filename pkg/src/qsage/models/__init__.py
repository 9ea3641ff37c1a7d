"""From-scratch predictors for queue wait time (regression) and wait bin (classification)."""
from qsage.models.base import (
    DEFAULT_HYPERPARAMETERS,
    FAMILIES,
    ModelSpec,
    NotFittedError,
    TrainedModel,
    clamp_minutes,
    fit,
    load_model,
    model_from_json,
    model_to_json,
    save_model,
)
from qsage.models.binning import BinSpec, assign_bins

__all__ = [
    "BinSpec",
    "DEFAULT_HYPERPARAMETERS",
    "FAMILIES",
    "ModelSpec",
    "NotFittedError",
    "TrainedModel",
    "assign_bins",
    "clamp_minutes",
    "fit",
    "load_model",
    "model_from_json",
    "model_to_json",
    "save_model",
]
