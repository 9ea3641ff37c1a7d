"""Brute-force k-nearest neighbours (Euclidean) for regression and voting."""
import numpy as np

from qsage.models import _kernels as K
from qsage.models.base import TrainedModel, _frozen_array, encode_classes


class KNNModel(TrainedModel):
    family = "knn"

    def __init__(self, spec, n_features, train_X, train_y, **common):
        super().__init__(spec, n_features, **common)
        self.train_X = _frozen_array(train_X)
        self.train_y = _frozen_array(train_y, np.float64 if spec.task == "regression" else np.int64)
        self.k = int(spec.hyperparameters["k"])
        self._freeze()

    def neighbors(self, Xs):
        """Row indices of the k nearest training rows; distance ties keep training order."""
        return K.knn_indices(self.train_X, np.ascontiguousarray(Xs, dtype=np.float64), self.k)

    def _predict_values(self, Xs):
        return self.train_y[self.neighbors(Xs)].mean(axis=1)

    def _predict_proba(self, Xs):
        # train_y holds class codes (positions in self.classes)
        votes = self.train_y[self.neighbors(Xs)]
        proba = np.zeros((Xs.shape[0], self.n_classes))
        for c in range(self.n_classes):
            proba[:, c] = (votes == c).sum(axis=1)
        return proba / self.k

    def _state(self):
        return {"neighbors": {"X": self.train_X.tolist(), "y": self.train_y.tolist()}}

    @classmethod
    def _from_state(cls, common, state):
        common = dict(common)
        spec, n = common.pop("spec"), common.pop("n_features")
        nb = state["neighbors"]
        X = np.array(nb["X"], dtype=np.float64).reshape(-1, n)
        return cls(spec, n, X, nb["y"], **common)


def fit_knn(X, y, spec, **common):
    k = spec.hyperparameters["k"]
    if k > X.shape[0]:
        raise ValueError(f"k={k} exceeds the {X.shape[0]} training rows")
    if spec.task == "classification":
        classes, codes = encode_classes(y)
        return KNNModel(spec, X.shape[1], X, codes, classes=classes, **common)
    return KNNModel(spec, X.shape[1], X, y, **common)
