"""Model specs, the fitted-model base class and JSON persistence."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from qsage.features import ScalerStats
from qsage.models.binning import BinSpec

FORMAT_VERSION = 1

FAMILIES = ("linear", "knn", "logistic", "random_forest", "hgb")
TASKS = ("regression", "classification")

_TASKS_BY_FAMILY = {
    "linear": ("regression",),
    "knn": ("regression", "classification"),
    "logistic": ("classification",),
    "random_forest": ("classification",),
    "hgb": ("regression", "classification"),
}

DEFAULT_HYPERPARAMETERS = {
    "linear": {},
    "knn": {"k": 5},
    "logistic": {"l2_penalty": 1e-4, "max_epochs": 500, "step_size": 0.5},
    "random_forest": {"n_trees": 100, "max_depth": None, "feature_subsample": None,
                      "min_samples_leaf": 1, "max_bins": 255, "bootstrap": True},
    "hgb": {"max_iterations": 500, "max_depth": 9, "learning_rate": 0.1, "max_bins": 255,
            "min_samples_leaf": 20, "l2_regularization": 0.0, "max_leaf_nodes": None},
}


class NotFittedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    family: str
    task: str = "regression"
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        if self.task not in _TASKS_BY_FAMILY[self.family]:
            raise ValueError(f"{self.family} does not support task {self.task!r}")
        unknown = set(self.hyperparameters) - set(DEFAULT_HYPERPARAMETERS[self.family])
        if unknown:
            raise ValueError(f"unknown {self.family} hyperparameters: {sorted(unknown)}")
        merged = dict(DEFAULT_HYPERPARAMETERS[self.family])
        merged.update(self.hyperparameters)
        object.__setattr__(self, "hyperparameters", merged)
        _check_hyperparameters(self.family, merged)

    def __hash__(self):
        return hash(self.key())

    @property
    def params(self):
        return self.hyperparameters

    def key(self) -> str:
        """Canonical text form; equal specs have equal keys."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def to_dict(self):
        return {"family": self.family, "task": self.task,
                "hyperparameters": dict(self.hyperparameters), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], d.get("task", "regression"), dict(d.get("hyperparameters", {})),
                   int(d.get("seed", 0)))


def _check_hyperparameters(family, hp):
    def positive_int(name, allow_none=False):
        v = hp[name]
        if v is None and allow_none:
            return
        if isinstance(v, bool) or int(v) != v or v < 1:
            raise ValueError(f"{name} must be an integer >= 1, got {v!r}")

    if family == "hgb":
        positive_int("max_iterations")
        positive_int("max_depth")
        positive_int("min_samples_leaf")
        positive_int("max_leaf_nodes", allow_none=True)
        if not 2 <= hp["max_bins"] <= 255:
            raise ValueError("max_bins must lie in 2..255")
        if not hp["learning_rate"] > 0:
            raise ValueError("learning_rate must be positive")
        if hp["l2_regularization"] < 0:
            raise ValueError("l2_regularization must be >= 0")
    elif family == "knn":
        positive_int("k")
    elif family == "logistic":
        positive_int("max_epochs")
        if hp["l2_penalty"] < 0 or not hp["step_size"] > 0:
            raise ValueError("need l2_penalty >= 0 and step_size > 0")
    elif family == "random_forest":
        if isinstance(hp["n_trees"], bool) or int(hp["n_trees"]) != hp["n_trees"] or hp["n_trees"] < 1:
            raise ValueError("n_trees must be >= 1")
        positive_int("max_depth", allow_none=True)
        positive_int("feature_subsample", allow_none=True)
        positive_int("min_samples_leaf")
        if not 2 <= hp["max_bins"] <= 255:
            raise ValueError("max_bins must lie in 2..255")


def _frozen_array(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


class TrainedModel:
    """A fitted predictor. Instances are immutable once constructed.

    Raw feature rows are passed to :meth:`predict`; when the model carries
    scaler statistics they are applied first.
    """

    family = None

    def __init__(self, spec: ModelSpec, n_features: int, scaler: ScalerStats | None = None,
                 bin_spec: BinSpec | None = None, classes=None):
        self.spec = spec
        self.n_features = int(n_features)
        self.scaler = scaler
        self.bin_spec = bin_spec
        self.classes = None if classes is None else _frozen_array(classes, np.int64)

    def _freeze(self):
        object.__setattr__(self, "_frozen", True)

    def __setattr__(self, name, value):
        if getattr(self, "_frozen", False):
            raise AttributeError(f"{type(self).__name__} is immutable")
        object.__setattr__(self, name, value)

    @property
    def task(self):
        return self.spec.task

    @property
    def n_classes(self):
        return 0 if self.classes is None else len(self.classes)

    def _prepare(self, X):
        if not getattr(self, "_frozen", False):
            raise NotFittedError("model is not fitted")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {X.shape}")
        if self.scaler is not None:
            X = self.scaler.transform(X)
        return X

    def predict(self, X) -> np.ndarray:
        """Raw minutes for regressors, class (bin index) for classifiers."""
        Xs = self._prepare(X)
        if self.task == "regression":
            return self._predict_values(Xs)
        proba = self._predict_proba(Xs)
        # argmax keeps the first maximum, i.e. the smallest bin on ties
        return self.classes[np.argmax(proba, axis=1)]

    def predict_proba(self, X) -> np.ndarray:
        if self.task != "classification":
            raise ValueError("predict_proba is only defined for classifiers")
        return self._predict_proba(self._prepare(X))

    def _predict_values(self, Xs):
        raise NotImplementedError

    def _predict_proba(self, Xs):
        raise NotImplementedError

    # persistence hooks
    def _state(self) -> dict:
        raise NotImplementedError

    @classmethod
    def _from_state(cls, common: dict, state: dict):
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "n_features": self.n_features,
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
            "bin_spec": None if self.bin_spec is None else self.bin_spec.to_dict(),
            "classes": None if self.classes is None else self.classes.tolist(),
            "state": self._state(),
        }


def clamp_minutes(pred) -> np.ndarray:
    """Reporting-layer view of regression output: queue time cannot be negative."""
    return np.maximum(np.asarray(pred, dtype=np.float64), 0.0)


def check_xy(X, y, task):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D feature matrix")
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise ValueError("empty training data")
    if y.shape != (X.shape[0],):
        raise ValueError(f"X has {X.shape[0]} rows but y has shape {y.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature values")
    if task == "classification":
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("class labels must be integers")
        y = y.astype(np.int64)
    else:
        y = y.astype(np.float64)
        if not np.all(np.isfinite(y)):
            raise ValueError("non-finite labels")
    return X, y


def encode_classes(y):
    classes, codes = np.unique(y, return_inverse=True)
    return classes, codes.astype(np.int64)


def fit(spec: ModelSpec, X, y, *, scaler: ScalerStats | None = None,
        bin_spec: BinSpec | None = None) -> TrainedModel:
    """Fit the model described by ``spec``.

    ``y`` holds minutes for regression and bin indices for classification.
    ``scaler`` statistics, when given, are applied to ``X`` before fitting
    and stored with the model.
    """
    from qsage.models import forest, hgb, knn, linear, logistic

    X, y = check_xy(X, y, spec.task)
    if scaler is not None:
        X = scaler.transform(X)
    fitter = {
        "linear": linear.fit_linear,
        "knn": knn.fit_knn,
        "logistic": logistic.fit_logistic,
        "random_forest": forest.fit_random_forest,
        "hgb": hgb.fit_hgb,
    }[spec.family]
    return fitter(X, y, spec, scaler=scaler, bin_spec=bin_spec)


def model_to_json(model: TrainedModel) -> str:
    return json.dumps(model.to_dict(), sort_keys=True)


def model_from_dict(doc: dict) -> TrainedModel:
    from qsage.models import forest, hgb, knn, linear, logistic

    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {doc.get('format_version')!r}")
    spec = ModelSpec.from_dict(doc["spec"])
    common = {
        "spec": spec,
        "n_features": int(doc["n_features"]),
        "scaler": None if doc.get("scaler") is None else ScalerStats.from_dict(doc["scaler"]),
        "bin_spec": None if doc.get("bin_spec") is None else BinSpec.from_dict(doc["bin_spec"]),
        "classes": doc.get("classes"),
    }
    cls = {
        "linear": linear.LinearModel,
        "knn": knn.KNNModel,
        "logistic": logistic.LogisticModel,
        "random_forest": forest.RandomForestModel,
        "hgb": hgb.HGBModel,
    }[spec.family]
    return cls._from_state(common, doc["state"])


def model_from_json(text: str) -> TrainedModel:
    return model_from_dict(json.loads(text))


def save_model(model: TrainedModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model_to_json(model))


def load_model(path) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_json(fh.read())
