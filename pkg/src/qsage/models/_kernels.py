"""Hot loops for tree fitting, tree prediction and neighbour search.

Every kernel exists twice: an ``@njit`` loop version and a vectorised numpy
version with the same float accumulation order, so both backends give
identical results on the same inputs. The module-level names without a
suffix are bound to whichever backend :mod:`qsage._accel` selected.
"""
import numpy as np

from qsage._accel import njit, pick

# histogram channels for gradient boosting
G, H, N = 0, 1, 2


# -- feature binning ----------------------------------------------------------

def quantile_edges(values, max_bins):
    """Upper-inclusive bin edges for one feature column.

    With at most ``max_bins`` distinct values each gets its own bin (edges at
    midpoints); otherwise edges sit at evenly spaced quantiles.
    """
    distinct = np.unique(values)
    if distinct.size <= max_bins:
        edges = (distinct[:-1] + distinct[1:]) / 2.0
    else:
        percentiles = np.linspace(0, 100, max_bins + 1)[1:-1]
        edges = np.unique(np.percentile(values, percentiles, method="midpoint"))
    return edges.astype(np.float64)


def apply_edges(X, edges_list):
    """Map raw values to bin codes: value ``x`` goes to the first edge ``>= x``.

    Values beyond the outermost edges fall into the boundary bins.
    """
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape, dtype=np.uint8)
    for f, edges in enumerate(edges_list):
        out[:, f] = np.searchsorted(edges, X[:, f], side="left")
    return np.ascontiguousarray(out)


# -- gradient histograms --------------------------------------------------------

@njit(cache=False)
def _grad_histogram_numba(binned, idx, grad, hess, n_bins):
    d = binned.shape[1]
    hist = np.zeros((d, n_bins, 3))
    for f in range(d):
        for i in idx:
            b = binned[i, f]
            hist[f, b, 0] += grad[i]
            hist[f, b, 1] += hess[i]
            hist[f, b, 2] += 1.0
    return hist


def _grad_histogram_numpy(binned, idx, grad, hess, n_bins):
    d = binned.shape[1]
    hist = np.zeros((d, n_bins, 3))
    g = grad[idx]
    h = hess[idx]
    for f in range(d):
        codes = binned[idx, f]
        hist[f, :, 0] = np.bincount(codes, weights=g, minlength=n_bins)
        hist[f, :, 1] = np.bincount(codes, weights=h, minlength=n_bins)
        hist[f, :, 2] = np.bincount(codes, minlength=n_bins)
    return hist


@njit(cache=False)
def _grad_split_numba(hist, n_bins_per_feature, feature_mask, min_samples_leaf, min_hessian, l2):
    d = hist.shape[0]
    best_gain = -np.inf
    best_f = -1
    best_b = -1
    for f in range(d):
        if not feature_mask[f]:
            continue
        g_tot = 0.0
        h_tot = 0.0
        n_tot = 0.0
        for b in range(n_bins_per_feature[f]):
            g_tot += hist[f, b, 0]
            h_tot += hist[f, b, 1]
            n_tot += hist[f, b, 2]
        parent = g_tot * g_tot / (h_tot + l2)
        gl = 0.0
        hl = 0.0
        nl = 0.0
        for b in range(n_bins_per_feature[f] - 1):
            gl += hist[f, b, 0]
            hl += hist[f, b, 1]
            nl += hist[f, b, 2]
            nr = n_tot - nl
            if nl < min_samples_leaf or nr < min_samples_leaf:
                continue
            hr = h_tot - hl
            if hl < min_hessian or hr < min_hessian:
                continue
            gr = g_tot - gl
            gain = gl * gl / (hl + l2) + gr * gr / (hr + l2) - parent
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_b = b
    return best_gain, best_f, best_b


def _grad_split_numpy(hist, n_bins_per_feature, feature_mask, min_samples_leaf, min_hessian, l2):
    d, n_bins, _ = hist.shape
    valid_bins = np.arange(n_bins)[None, :] < (n_bins_per_feature[:, None] - 1)
    cum = np.cumsum(hist, axis=1)
    tot = cum[np.arange(d), n_bins_per_feature - 1]
    gl, hl, nl = cum[:, :, 0], cum[:, :, 1], cum[:, :, 2]
    g_tot, h_tot, n_tot = tot[:, 0:1], tot[:, 1:2], tot[:, 2:3]
    nr = n_tot - nl
    hr = h_tot - hl
    gr = g_tot - gl
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = gl * gl / (hl + l2) + gr * gr / (hr + l2) - g_tot * g_tot / (h_tot + l2)
    ok = (valid_bins & feature_mask[:, None].astype(bool)
          & (nl >= min_samples_leaf) & (nr >= min_samples_leaf)
          & (hl >= min_hessian) & (hr >= min_hessian))
    gain = np.where(ok, gain, -np.inf)
    flat = int(np.argmax(gain))
    f, b = divmod(flat, n_bins)
    if not ok[f, b]:
        return -np.inf, -1, -1
    return float(gain[f, b]), f, b


# -- class-count histograms (random forest) ---------------------------------------

@njit(cache=False)
def _class_histogram_numba(binned, idx, weight, codes, n_classes, n_bins):
    d = binned.shape[1]
    hist = np.zeros((d, n_bins, n_classes))
    for f in range(d):
        for i in idx:
            hist[f, binned[i, f], codes[i]] += weight[i]
    return hist


def _class_histogram_numpy(binned, idx, weight, codes, n_classes, n_bins):
    d = binned.shape[1]
    hist = np.zeros((d, n_bins, n_classes))
    w = weight[idx]
    c = codes[idx]
    for f in range(d):
        flat = binned[idx, f].astype(np.int64) * n_classes + c
        hist[f] = np.bincount(flat, weights=w, minlength=n_bins * n_classes).reshape(n_bins, n_classes)
    return hist


@njit(cache=False)
def _gini_split_numba(hist, n_bins_per_feature, feature_mask, min_samples_leaf):
    d = hist.shape[0]
    k = hist.shape[2]
    best_gain = -np.inf
    best_f = -1
    best_b = -1
    left = np.zeros(k)
    total = np.zeros(k)
    for f in range(d):
        if not feature_mask[f]:
            continue
        total[:] = 0.0
        for b in range(n_bins_per_feature[f]):
            for c in range(k):
                total[c] += hist[f, b, c]
        n_tot = 0.0
        sq_tot = 0.0
        for c in range(k):
            n_tot += total[c]
            sq_tot += total[c] * total[c]
        parent = sq_tot / n_tot
        left[:] = 0.0
        for b in range(n_bins_per_feature[f] - 1):
            nl = 0.0
            sql = 0.0
            sqr = 0.0
            for c in range(k):
                left[c] += hist[f, b, c]
                nl += left[c]
                sql += left[c] * left[c]
                r = total[c] - left[c]
                sqr += r * r
            nr = n_tot - nl
            if nl < min_samples_leaf or nr < min_samples_leaf:
                continue
            gain = sql / nl + sqr / nr - parent
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_b = b
    return best_gain, best_f, best_b


def _gini_split_numpy(hist, n_bins_per_feature, feature_mask, min_samples_leaf):
    d, n_bins, k = hist.shape
    valid_bins = np.arange(n_bins)[None, :] < (n_bins_per_feature[:, None] - 1)
    cum = np.cumsum(hist, axis=1)
    total = cum[np.arange(d), n_bins_per_feature - 1]
    right = total[:, None, :] - cum
    nl = np.zeros((d, n_bins))
    sql = np.zeros((d, n_bins))
    sqr = np.zeros((d, n_bins))
    for c in range(k):
        nl += cum[:, :, c]
        sql += cum[:, :, c] * cum[:, :, c]
        sqr += right[:, :, c] * right[:, :, c]
    n_tot = np.zeros(d)
    sq_tot = np.zeros(d)
    for c in range(k):
        n_tot += total[:, c]
        sq_tot += total[:, c] * total[:, c]
    nr = n_tot[:, None] - nl
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = sql / nl + sqr / nr - (sq_tot / n_tot)[:, None]
    ok = (valid_bins & feature_mask[:, None].astype(bool)
          & (nl >= min_samples_leaf) & (nr >= min_samples_leaf))
    gain = np.where(ok, gain, -np.inf)
    flat = int(np.argmax(gain))
    f, b = divmod(flat, n_bins)
    if not ok[f, b]:
        return -np.inf, -1, -1
    return float(gain[f, b]), f, b


# -- tree traversal ---------------------------------------------------------------
#
# Trees are stored flat: node arrays shared by the whole ensemble, ``roots``
# gives each tree's root node. A leaf has feature == -1.

@njit(cache=False)
def _leaf_indices_numba(binned, root, feature, threshold, left, right):
    n = binned.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = root
        while feature[node] >= 0:
            if binned[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


def _leaf_indices_numpy(binned, root, feature, threshold, left, right):
    n = binned.shape[0]
    node = np.full(n, root, dtype=np.int64)
    rows = np.arange(n)
    active = feature[node] >= 0
    while active.any():
        idx = rows[active]
        nd = node[idx]
        go_left = binned[idx, feature[nd]] <= threshold[nd]
        node[idx] = np.where(go_left, left[nd], right[nd])
        active = feature[node] >= 0
    return node


@njit(cache=False)
def _boosted_sum_numba(binned, raw, roots, tree_class, feature, threshold, left, right, value):
    n = binned.shape[0]
    for t in range(roots.shape[0]):
        k = tree_class[t]
        root = roots[t]
        for i in range(n):
            node = root
            while feature[node] >= 0:
                if binned[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            raw[i, k] += value[node]
    return raw


def _boosted_sum_numpy(binned, raw, roots, tree_class, feature, threshold, left, right, value):
    for t in range(roots.shape[0]):
        leaves = _leaf_indices_numpy(binned, roots[t], feature, threshold, left, right)
        raw[:, tree_class[t]] += value[leaves]
    return raw


# -- nearest neighbours ---------------------------------------------------------------

@njit(cache=False)
def _knn_numba(train, query, k):
    n, d = train.shape
    out = np.empty((query.shape[0], k), dtype=np.int64)
    dist = np.empty(n)
    for q in range(query.shape[0]):
        for i in range(n):
            s = 0.0
            for j in range(d):
                diff = query[q, j] - train[i, j]
                s += diff * diff
            dist[i] = s
        order = np.argsort(dist, kind="mergesort")
        out[q, :] = order[:k]
    return out


def _knn_numpy(train, query, k, chunk=256):
    out = np.empty((query.shape[0], k), dtype=np.int64)
    for lo in range(0, query.shape[0], chunk):
        q = query[lo:lo + chunk]
        diff = q[:, None, :] - train[None, :, :]
        dist = np.zeros((q.shape[0], train.shape[0]))
        for j in range(train.shape[1]):
            dist += diff[:, :, j] * diff[:, :, j]
        out[lo:lo + chunk] = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return out


grad_histogram = pick(_grad_histogram_numba, _grad_histogram_numpy)
grad_split = pick(_grad_split_numba, _grad_split_numpy)
class_histogram = pick(_class_histogram_numba, _class_histogram_numpy)
gini_split = pick(_gini_split_numba, _gini_split_numpy)
leaf_indices = pick(_leaf_indices_numba, _leaf_indices_numpy)
boosted_sum = pick(_boosted_sum_numba, _boosted_sum_numpy)
knn_indices = pick(_knn_numba, _knn_numpy)
