import numpy as np
import pytest

from qsage.models import ModelSpec, fit, model_from_json, model_to_json
from qsage.models import _kernels as K
from qsage.models.hgb import _cross_entropy, _squared_loss, grow_tree


def regression_data(seed=0, n=600):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    y = 50 * (X[:, 0] > 0) + 20 * X[:, 1] ** 2 + rng.normal(0, 2, n)
    return X, y


def spec(task="regression", **hp):
    base = {"max_iterations": 40, "max_depth": 4, "min_samples_leaf": 5}
    base.update(hp)
    return ModelSpec("hgb", task, base)


def depth_of(model, node, depth=0):
    if model.feature[node] < 0:
        return depth
    return max(depth_of(model, model.left[node], depth + 1),
               depth_of(model, model.right[node], depth + 1))


def test_training_loss_never_increases():
    X, y = regression_data()
    model = fit(spec(), X, y)
    loss = np.array(model.train_loss)
    assert loss.size == 41
    assert np.all(np.diff(loss) <= 1e-12)
    assert loss[-1] < 0.05 * loss[0]


def test_recorded_loss_matches_prediction_bit_for_bit():
    X, y = regression_data(1)
    model = fit(spec(), X, y)
    assert _squared_loss(y, model.raw_scores(X)) == model.train_loss[-1]
    codes = (y > np.median(y)).astype(int)
    clf = fit(spec("classification", max_iterations=10), X, codes)
    assert _cross_entropy(codes, clf.raw_scores(X)) == clf.train_loss[-1]


def test_prefix_equals_shorter_training_run():
    X, y = regression_data(2)
    full = fit(spec(max_iterations=30), X, y)
    short = fit(spec(max_iterations=12), X, y)
    cut = full.truncated(12)
    assert np.array_equal(cut.predict(X), short.predict(X))
    assert np.array_equal(full.raw_scores(X, n_iterations=12)[:, 0], short.predict(X))
    assert model_to_json(cut) == model_to_json(short)


def test_depth_and_leaf_bounds():
    X, y = regression_data(3)
    model = fit(spec(max_depth=3, max_iterations=10), X, y)
    assert all(depth_of(model, int(r)) <= 3 for r in model.roots)
    Xb = K.apply_edges(X, [K.quantile_edges(X[:, f], 255) for f in range(4)])
    n_bins = np.array([256] * 4)
    grad = np.random.default_rng(0).normal(size=len(X))
    tree, leaves = grow_tree(Xb, grad, np.ones(len(X)), n_bins, max_depth=6,
                             min_samples_leaf=40, learning_rate=0.1)
    assert min(len(idx) for idx in leaves.values()) >= 40
    assert sum(len(idx) for idx in leaves.values()) == len(X)
    capped, leaves = grow_tree(Xb, grad, np.ones(len(X)), n_bins, max_depth=6,
                               min_samples_leaf=1, learning_rate=0.1, max_leaf_nodes=5)
    assert capped.n_leaves == 5 == len(leaves)


def test_constant_target_has_no_splits():
    X = np.random.default_rng(4).normal(size=(100, 3))
    model = fit(spec(max_iterations=5), X, np.full(100, 7.0))
    assert np.all(model.feature == -1)
    assert np.all(model.predict(X) == 7.0)


def test_classifier_learns_bins_and_keeps_labels():
    X, y = regression_data(5)
    bins = np.digitize(y, [10, 30, 60]) + 1
    model = fit(spec("classification", max_iterations=30), X, bins)
    assert model.classes.tolist() == sorted(set(bins.tolist()))
    assert model.n_trees_per_iteration == model.classes.size
    assert np.mean(model.predict(X) == bins) > 0.85
    proba = model.predict_proba(X)
    assert np.allclose(proba.sum(axis=1), 1.0)


def test_single_class_classifier():
    X = np.random.default_rng(6).normal(size=(50, 2))
    model = fit(spec("classification"), X, np.full(50, 3))
    assert model.predict(X).tolist() == [3] * 50
    assert model.n_iterations == 0


def test_deterministic_and_round_trips():
    X, y = regression_data(7)
    a, b = fit(spec(), X, y), fit(spec(), X, y)
    assert model_to_json(a) == model_to_json(b)
    back = model_from_json(model_to_json(a))
    assert np.array_equal(back.predict(X), a.predict(X))
    assert back.train_loss == a.train_loss


def test_l2_shrinks_leaf_values():
    X, y = regression_data(8)
    plain = fit(spec(max_iterations=1, max_depth=1), X, y)
    ridge = fit(spec(max_iterations=1, max_depth=1, l2_regularization=1000.0), X, y)
    assert np.abs(ridge.value).max() < np.abs(plain.value).max()


def test_too_few_rows():
    with pytest.raises(ValueError):
        fit(spec(min_samples_leaf=20), np.zeros((30, 1)), np.zeros(30))


def test_quantile_edges_and_binning():
    x = np.array([3.0, 1.0, 2.0, 2.0])
    edges = K.quantile_edges(x, 255)
    assert edges.tolist() == [1.5, 2.5]
    binned = K.apply_edges(np.array([[1.0], [1.5], [2.0], [9.0]]), [edges])
    assert binned[:, 0].tolist() == [0, 0, 1, 2]
    many = K.quantile_edges(np.arange(10_000.0), 255)
    assert many.size <= 254 and np.all(np.diff(many) > 0)
