"""Multinomial logistic regression fitted by full-batch gradient descent."""
import numpy as np

from qsage.models.base import TrainedModel, _frozen_array, encode_classes


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(W, b, X, onehot, l2):
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` and its gradient in (W, b)."""
    n = X.shape[0]
    z = X @ W + b
    zs = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(zs).sum(axis=1, keepdims=True))
    logp = zs - log_norm
    loss = -float((onehot * logp).sum()) / n + 0.5 * l2 * float((W * W).sum())
    diff = (np.exp(logp) - onehot) / n
    return loss, X.T @ diff + l2 * W, diff.sum(axis=0)


class LogisticModel(TrainedModel):
    family = "logistic"

    def __init__(self, spec, n_features, coef, intercept, **common):
        super().__init__(spec, n_features, **common)
        self.coef = _frozen_array(coef).reshape(n_features, -1)
        self.intercept = _frozen_array(intercept)
        self._freeze()

    def _predict_proba(self, Xs):
        return _softmax(Xs @ self.coef + self.intercept)

    def _state(self):
        return {"coefficients": self.coef.tolist(), "intercept": self.intercept.tolist()}

    @classmethod
    def _from_state(cls, common, state):
        common = dict(common)
        spec, n = common.pop("spec"), common.pop("n_features")
        return cls(spec, n, state["coefficients"], state["intercept"], **common)


def fit_logistic(X, y, spec, **common):
    hp = spec.hyperparameters
    classes, codes = encode_classes(y)
    if classes.size < 2:
        raise ValueError("logistic regression needs at least two distinct classes")
    n, d = X.shape
    onehot = np.zeros((n, classes.size))
    onehot[np.arange(n), codes] = 1.0
    # zero start: deterministic and symmetric, the seed is not consumed
    W = np.zeros((d, classes.size))
    b = np.zeros(classes.size)
    step = hp["step_size"]
    for _ in range(hp["max_epochs"]):
        _, gW, gb = loss_and_grad(W, b, X, onehot, hp["l2_penalty"])
        W -= step * gW
        b -= step * gb
    return LogisticModel(spec, d, W, b, classes=classes, **common)
