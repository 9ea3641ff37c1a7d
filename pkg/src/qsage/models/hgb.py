"""Histogram-based gradient boosting for regression and multiclass classification.

Features are discretised once into at most ``max_bins`` quantile bins. Each
boosting iteration grows depth-bounded trees best-first on per-node
gradient/hessian histograms; leaf values are Newton steps scaled by the
learning rate. Regression uses squared error (hessian 1), classification a
softmax over the training classes with one tree per class per iteration.
"""
from __future__ import annotations

import heapq

import numpy as np

from qsage.models import _kernels as K
from qsage.models.base import ModelSpec, TrainedModel, _frozen_array, encode_classes

MIN_HESSIAN = 1e-3


class Tree:
    """Flat node arrays built by :func:`grow_tree`."""

    def __init__(self):
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []
        self.gain = []

    def add(self, value):
        self.feature.append(-1)
        self.threshold.append(0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        self.gain.append(0.0)
        return len(self.value) - 1

    @property
    def n_nodes(self):
        return len(self.value)

    @property
    def n_leaves(self):
        return sum(1 for f in self.feature if f < 0)


def grow_tree(binned, grad, hess, n_bins_per_feature, *, max_depth, min_samples_leaf,
              learning_rate, l2=0.0, max_leaf_nodes=None):
    """Grow one regression tree on (grad, hess) best-first.

    Returns ``(tree, leaves)`` where ``leaves`` maps each leaf node id to the
    training row indices that landed in it.
    """
    n_bins = int(n_bins_per_feature.max())
    mask = np.ones(binned.shape[1], dtype=np.bool_)
    tree = Tree()
    counter = 0
    heap = []
    leaves = {}

    def make_node(idx, depth):
        nonlocal counter
        hist = K.grad_histogram(binned, idx, grad, hess, n_bins)
        g = float(hist[0, :, K.G].sum())
        h = float(hist[0, :, K.H].sum())
        node = tree.add(-learning_rate * g / (h + l2) if h + l2 > 0 else 0.0)
        leaves[node] = idx
        if depth < max_depth and idx.shape[0] >= 2 * min_samples_leaf:
            gain, f, b = K.grad_split(hist, n_bins_per_feature, mask, min_samples_leaf,
                                      MIN_HESSIAN, l2)
            if f >= 0 and gain > 0:
                heapq.heappush(heap, (-gain, counter, node, f, b, depth))
                counter += 1
        return node

    make_node(np.arange(binned.shape[0], dtype=np.int64), 0)
    n_leaves = 1
    while heap:
        if max_leaf_nodes is not None and n_leaves >= max_leaf_nodes:
            break
        neg_gain, _, node, f, b, depth = heapq.heappop(heap)
        idx = leaves.pop(node)
        go_left = binned[idx, f] <= b
        tree.feature[node] = f
        tree.threshold[node] = b
        tree.gain[node] = -neg_gain
        tree.left[node] = make_node(idx[go_left], depth + 1)
        tree.right[node] = make_node(idx[~go_left], depth + 1)
        n_leaves += 1
    return tree, leaves


def _softmax(raw):
    z = raw - raw.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _squared_loss(y, raw):
    return float(np.mean((y - raw[:, 0]) ** 2)) / 2.0


def _cross_entropy(codes, raw):
    z = raw - raw.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(logsum - z[np.arange(len(codes)), codes]))


class HGBModel(TrainedModel):
    family = "hgb"

    def __init__(self, spec, n_features, *, edges, baseline, roots, tree_class, feature,
                 threshold, left, right, value, train_loss=(), **common):
        super().__init__(spec, n_features, **common)
        self.edges = tuple(_frozen_array(e) for e in edges)
        self.baseline = _frozen_array(baseline)
        self.roots = _frozen_array(roots, np.int64)
        self.tree_class = _frozen_array(tree_class, np.int64)
        self.feature = _frozen_array(feature, np.int64)
        self.threshold = _frozen_array(threshold, np.int64)
        self.left = _frozen_array(left, np.int64)
        self.right = _frozen_array(right, np.int64)
        self.value = _frozen_array(value)
        self.train_loss = tuple(float(v) for v in train_loss)
        self._freeze()

    @property
    def n_trees_per_iteration(self):
        return self.baseline.shape[0]

    @property
    def n_iterations(self):
        return self.roots.shape[0] // self.n_trees_per_iteration

    @property
    def max_iterations(self):
        return self.spec.hyperparameters["max_iterations"]

    @property
    def max_depth(self):
        return self.spec.hyperparameters["max_depth"]

    def raw_scores(self, Xs, n_iterations=None):
        m = self.n_iterations if n_iterations is None else min(n_iterations, self.n_iterations)
        n_trees = m * self.n_trees_per_iteration
        binned = K.apply_edges(Xs, self.edges)
        raw = np.tile(self.baseline, (Xs.shape[0], 1))
        if self.feature.size == 0:
            return raw
        return K.boosted_sum(binned, raw, np.ascontiguousarray(self.roots[:n_trees]),
                             np.ascontiguousarray(self.tree_class[:n_trees]),
                             self.feature, self.threshold, self.left, self.right, self.value)

    def _predict_values(self, Xs):
        return self.raw_scores(Xs)[:, 0]

    def _predict_proba(self, Xs):
        return _softmax(self.raw_scores(Xs))

    def truncated(self, n_iterations):
        """The same ensemble cut after ``n_iterations`` boosting rounds.

        The result equals a model trained with ``max_iterations=n_iterations``.
        """
        n_iterations = min(int(n_iterations), self.n_iterations)
        spec = ModelSpec(self.spec.family, self.spec.task,
                         dict(self.spec.hyperparameters, max_iterations=max(n_iterations, 1)),
                         self.spec.seed)
        n_trees = n_iterations * self.n_trees_per_iteration
        if n_trees >= self.roots.shape[0]:
            keep_nodes = self.value.shape[0]
        else:
            keep_nodes = int(self.roots[n_trees])
        return HGBModel(
            spec, self.n_features, edges=self.edges, baseline=self.baseline,
            roots=self.roots[:n_trees], tree_class=self.tree_class[:n_trees],
            feature=self.feature[:keep_nodes], threshold=self.threshold[:keep_nodes],
            left=self.left[:keep_nodes], right=self.right[:keep_nodes],
            value=self.value[:keep_nodes], train_loss=self.train_loss[:n_iterations + 1],
            scaler=self.scaler, bin_spec=self.bin_spec, classes=self.classes)

    def _state(self):
        return {
            "bin_edges": [e.tolist() for e in self.edges],
            "baseline": self.baseline.tolist(),
            "trees": {
                "roots": self.roots.tolist(),
                "tree_class": self.tree_class.tolist(),
                "feature": self.feature.tolist(),
                "threshold": self.threshold.tolist(),
                "left": self.left.tolist(),
                "right": self.right.tolist(),
                "value": self.value.tolist(),
            },
            "train_loss": list(self.train_loss),
        }

    @classmethod
    def _from_state(cls, common, state):
        common = dict(common)
        spec, n = common.pop("spec"), common.pop("n_features")
        t = state["trees"]
        return cls(spec, n, edges=state["bin_edges"], baseline=state["baseline"],
                   roots=t["roots"], tree_class=t["tree_class"], feature=t["feature"],
                   threshold=t["threshold"], left=t["left"], right=t["right"],
                   value=t["value"], train_loss=state.get("train_loss", ()), **common)


def fit_hgb(X, y, spec, **common):
    hp = spec.hyperparameters
    n, d = X.shape
    if n < 2 * hp["min_samples_leaf"]:
        raise ValueError(f"need at least {2 * hp['min_samples_leaf']} rows for "
                         f"min_samples_leaf={hp['min_samples_leaf']}, got {n}")
    edges = [K.quantile_edges(X[:, f], hp["max_bins"]) for f in range(d)]
    binned = K.apply_edges(X, edges)
    n_bins_pf = np.array([e.size + 1 for e in edges], dtype=np.int64)
    grow = dict(max_depth=hp["max_depth"], min_samples_leaf=hp["min_samples_leaf"],
                learning_rate=hp["learning_rate"], l2=hp["l2_regularization"],
                max_leaf_nodes=hp["max_leaf_nodes"])

    if spec.task == "regression":
        classes = None
        baseline = np.array([y.mean()])
        targets = None
        loss = lambda raw: _squared_loss(y, raw)  # noqa: E731
    else:
        classes, codes = encode_classes(y)
        counts = np.bincount(codes, minlength=classes.size).astype(np.float64)
        baseline = np.log(counts / n)
        targets = np.zeros((n, classes.size))
        targets[np.arange(n), codes] = 1.0
        loss = lambda raw: _cross_entropy(codes, raw)  # noqa: E731
    n_out = baseline.shape[0]
    raw = np.tile(baseline, (n, 1))

    feature, threshold, left, right, value = [], [], [], [], []
    roots, tree_class = [], []
    history = [loss(raw)]
    single_class = classes is not None and classes.size == 1
    n_iter = 0 if single_class else hp["max_iterations"]
    for _ in range(n_iter):
        if targets is None:
            grads = [raw[:, 0] - y]
            hesses = [np.ones(n)]
        else:
            p = _softmax(raw)
            grads = [p[:, k] - targets[:, k] for k in range(n_out)]
            hesses = [np.maximum(p[:, k] * (1.0 - p[:, k]), 1e-16) for k in range(n_out)]
        updates = []
        for k in range(n_out):
            tree, leaves = grow_tree(binned, np.ascontiguousarray(grads[k]),
                                     np.ascontiguousarray(hesses[k]), n_bins_pf, **grow)
            offset = len(value)
            roots.append(offset)
            tree_class.append(k)
            feature.extend(tree.feature)
            threshold.extend(tree.threshold)
            left.extend(c + offset if c >= 0 else -1 for c in tree.left)
            right.extend(c + offset if c >= 0 else -1 for c in tree.right)
            value.extend(tree.value)
            updates.append((k, tree, leaves))
        for k, tree, leaves in updates:
            for node, idx in leaves.items():
                raw[idx, k] += tree.value[node]
        history.append(loss(raw))

    return HGBModel(spec, d, edges=edges, baseline=baseline, roots=roots, tree_class=tree_class,
                    feature=feature, threshold=threshold, left=left, right=right, value=value,
                    train_loss=history, classes=classes, **common)
