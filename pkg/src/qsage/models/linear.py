"""Ordinary least squares with an intercept."""
import numpy as np

from qsage.models.base import TrainedModel, _frozen_array

RIDGE = 1e-8
# Above this condition number the normal system is treated as singular.
_COND_LIMIT = 1e12


class LinearModel(TrainedModel):
    family = "linear"

    def __init__(self, spec, n_features, coef, intercept, **common):
        super().__init__(spec, n_features, **common)
        self.coef = _frozen_array(coef)
        self.intercept = float(intercept)
        self._freeze()

    def _predict_values(self, Xs):
        return Xs @ self.coef + self.intercept

    def _state(self):
        return {"coef": self.coef.tolist(), "intercept": self.intercept}

    @classmethod
    def _from_state(cls, common, state):
        common = dict(common)
        spec, n = common.pop("spec"), common.pop("n_features")
        common.pop("classes", None)
        return cls(spec, n, state["coef"], state["intercept"], **common)


def solve_least_squares(X, y):
    """Coefficients and intercept minimising squared error.

    The data are centred so the intercept drops out of the normal system.
    A ridge of ``1e-8 * I`` is added when that system is numerically
    singular (e.g. duplicated columns).
    """
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    A = Xc.T @ Xc
    b = Xc.T @ yc
    d = A.shape[0]
    if d == 0:
        return np.zeros(0), float(y_mean)
    if np.linalg.cond(A) > _COND_LIMIT:
        A = A + RIDGE * np.eye(d)
    try:
        coef = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        coef = np.linalg.solve(A + RIDGE * np.eye(d), b)
    return coef, float(y_mean - x_mean @ coef)


def fit_linear(X, y, spec, **common):
    coef, intercept = solve_least_squares(X, y)
    return LinearModel(spec, X.shape[1], coef, intercept, **common)
