"""Random forest classifier on quantile-binned features.

Trees split on Gini decrease computed from per-bin class-count histograms;
each node draws its own feature subset. Prediction is a plurality vote of
the trees' leaf majorities.
"""
import math

import numpy as np

from qsage.models import _kernels as K
from qsage.models.base import TrainedModel, _frozen_array, encode_classes


class RandomForestModel(TrainedModel):
    family = "random_forest"

    def __init__(self, spec, n_features, *, edges, roots, feature, threshold, left, right,
                 leaf_class, **common):
        super().__init__(spec, n_features, **common)
        self.edges = tuple(_frozen_array(e) for e in edges)
        self.roots = _frozen_array(roots, np.int64)
        self.feature = _frozen_array(feature, np.int64)
        self.threshold = _frozen_array(threshold, np.int64)
        self.left = _frozen_array(left, np.int64)
        self.right = _frozen_array(right, np.int64)
        self.leaf_class = _frozen_array(leaf_class, np.int64)
        self._freeze()

    @property
    def n_trees(self):
        return self.roots.shape[0]

    def _predict_proba(self, Xs):
        binned = K.apply_edges(Xs, self.edges)
        votes = np.zeros((Xs.shape[0], self.n_classes))
        rows = np.arange(Xs.shape[0])
        for root in self.roots:
            leaves = K.leaf_indices(binned, int(root), self.feature, self.threshold,
                                    self.left, self.right)
            votes[rows, self.leaf_class[leaves]] += 1.0
        return votes / self.n_trees

    def _state(self):
        return {
            "bin_edges": [e.tolist() for e in self.edges],
            "trees": {
                "roots": self.roots.tolist(),
                "feature": self.feature.tolist(),
                "threshold": self.threshold.tolist(),
                "left": self.left.tolist(),
                "right": self.right.tolist(),
                "leaf_class": self.leaf_class.tolist(),
            },
        }

    @classmethod
    def _from_state(cls, common, state):
        common = dict(common)
        spec, n = common.pop("spec"), common.pop("n_features")
        t = state["trees"]
        return cls(spec, n, edges=state["bin_edges"], roots=t["roots"], feature=t["feature"],
                   threshold=t["threshold"], left=t["left"], right=t["right"],
                   leaf_class=t["leaf_class"], **common)


def _grow(binned, codes, weight, n_classes, n_bins_pf, rng, max_depth, min_samples_leaf,
          n_sub, nodes):
    feature, threshold, left, right, leaf_class = nodes
    n_bins = int(n_bins_pf.max())
    d = binned.shape[1]

    def new_node(idx):
        counts = np.bincount(codes[idx], weights=weight[idx], minlength=n_classes)
        feature.append(-1)
        threshold.append(0)
        left.append(-1)
        right.append(-1)
        leaf_class.append(int(np.argmax(counts)))
        return len(feature) - 1, counts

    root_idx = np.flatnonzero(weight > 0)
    root, counts = new_node(root_idx)
    stack = [(root, root_idx, counts, 0)]
    while stack:
        node, idx, counts, depth = stack.pop()
        total = counts.sum()
        if np.count_nonzero(counts) <= 1 or total < 2 * min_samples_leaf:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        mask = np.zeros(d, dtype=np.bool_)
        mask[rng.choice(d, size=n_sub, replace=False)] = True
        hist = K.class_histogram(binned, idx, weight, codes, n_classes, n_bins)
        gain, f, b = K.gini_split(hist, n_bins_pf, mask, float(min_samples_leaf))
        if f < 0 or not gain > 1e-12 * total:
            continue
        go_left = binned[idx, f] <= b
        l_node, l_counts = new_node(idx[go_left])
        r_node, r_counts = new_node(idx[~go_left])
        feature[node] = f
        threshold[node] = b
        left[node] = l_node
        right[node] = r_node
        stack.append((r_node, idx[~go_left], r_counts, depth + 1))
        stack.append((l_node, idx[go_left], l_counts, depth + 1))


def fit_random_forest(X, y, spec, **common):
    hp = spec.hyperparameters
    n, d = X.shape
    classes, codes = encode_classes(y)
    edges = [K.quantile_edges(X[:, f], hp["max_bins"]) for f in range(d)]
    binned = K.apply_edges(X, edges)
    n_bins_pf = np.array([e.size + 1 for e in edges], dtype=np.int64)
    n_sub = hp["feature_subsample"] or max(1, math.ceil(math.sqrt(d)))
    n_sub = min(n_sub, d)
    rng = np.random.default_rng(spec.seed)
    nodes = ([], [], [], [], [])
    roots = []
    for _ in range(hp["n_trees"]):
        if hp["bootstrap"]:
            weight = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)
        else:
            weight = np.ones(n)
        roots.append(len(nodes[0]))
        _grow(binned, codes, weight, classes.size, n_bins_pf, rng, hp["max_depth"],
              hp["min_samples_leaf"], n_sub, nodes)
    feature, threshold, left, right, leaf_class = nodes
    return RandomForestModel(spec, d, edges=edges, roots=roots, feature=feature,
                             threshold=threshold, left=left, right=right,
                             leaf_class=leaf_class, classes=classes, **common)
