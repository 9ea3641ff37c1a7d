"""Time every hot kernel on its numba path and its numpy path.

    python benchmarks/bench_kernels.py [--repeat N] [--scale S]

Both implementations are called directly, so one process compares them;
the first numba call (JIT compilation) is reported separately. The last
section times a full HGB fit in two subprocesses, one per backend, since
the backend is fixed at import time.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from qsage import features, synth
from qsage.models import ModelSpec, fit
from qsage.models import _kernels as K


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def compare(name, numba_fn, numpy_fn, args, repeat):
    t = time.perf_counter()
    numba_fn(*args)
    jit = time.perf_counter() - t
    a = best_of(lambda: numba_fn(*args), repeat)
    b = best_of(lambda: numpy_fn(*args), repeat)
    print(f"{name:<16} numba {a * 1e3:9.2f} ms  numpy {b * 1e3:9.2f} ms  "
          f"speedup {b / a:6.1f}x  (first call incl. JIT {jit:.2f} s)")


def kernel_inputs(scale):
    rng = np.random.default_rng(0)
    n = 20_000 * scale
    X = rng.normal(size=(n, 6))
    edges = [K.quantile_edges(X[:, f], 255) for f in range(6)]
    binned = K.apply_edges(X, edges)
    n_bins_pf = np.array([e.size + 1 for e in edges], dtype=np.int64)
    idx = np.arange(n, dtype=np.int64)
    grad, hess = rng.normal(size=n), np.ones(n)
    hist = K._grad_histogram_numpy(binned, idx, grad, hess, 256)
    codes = rng.integers(0, 4, n).astype(np.int64)
    weight = np.ones(n)
    chist = K._class_histogram_numpy(binned, idx, weight, codes, 4, 256)
    mask = np.ones(6, dtype=np.bool_)
    model = fit(ModelSpec("hgb", "regression", {"max_iterations": 50}), X[:5000], X[:5000, 0])
    raw = np.zeros((n, 1))
    tree_args = (model.roots, model.tree_class, model.feature, model.threshold, model.left,
                 model.right, model.value)
    recs = synth.simulate(synth.WorkloadConfig(5000 * scale, 20.0, {1: 0.5, 8: 0.5},
                                               {30: 0.5, 120: 0.5}, seed=1),
                          synth.ClusterConfig(64))
    recs.sort(key=lambda r: (r.submit_time, r.job_id))
    state = (np.array([r.submit_time for r in recs]), np.array([r.start_time for r in recs]),
             np.array([r.end_time for r in recs]), np.array([float(r.max_minutes) for r in recs]))
    train, query = X[:4000], X[4000:4500]
    return {
        "state_sweep": (features._state_sweep_numba, features._state_sweep_numpy, state),
        "grad_histogram": (K._grad_histogram_numba, K._grad_histogram_numpy,
                           (binned, idx, grad, hess, 256)),
        "grad_split": (K._grad_split_numba, K._grad_split_numpy,
                       (hist, n_bins_pf, mask, 20, 1e-3, 0.0)),
        "class_histogram": (K._class_histogram_numba, K._class_histogram_numpy,
                            (binned, idx, weight, codes, 4, 256)),
        "gini_split": (K._gini_split_numba, K._gini_split_numpy, (chist, n_bins_pf, mask, 1.0)),
        "leaf_indices": (K._leaf_indices_numba, K._leaf_indices_numpy,
                         (binned, 0, model.feature, model.threshold, model.left, model.right)),
        "boosted_sum": (K._boosted_sum_numba, K._boosted_sum_numpy, (binned, raw) + tree_args),
        "knn": (K._knn_numba, K._knn_numpy, (train, query, 5)),
    }


FIT_SNIPPET = """
import time, numpy as np
from qsage.models import ModelSpec, fit
rng = np.random.default_rng(0)
X = rng.normal(size=({n}, 6)); y = X[:, 0] * 30 + X[:, 1] ** 2 * 10 + rng.normal(size={n})
fit(ModelSpec('hgb', 'regression', {{'max_iterations': 2}}), X[:200], y[:200])
t = time.perf_counter()
fit(ModelSpec('hgb', 'regression', {{'max_iterations': 100}}), X, y)
print(time.perf_counter() - t)
"""


def fit_timings(n):
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, QSAGE_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", FIT_SNIPPET.format(n=n)], env=env,
                             capture_output=True, text=True, check=True)
        out[label] = float(res.stdout.strip())
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=int, default=1)
    args = ap.parse_args()

    print(f"kernels (best of {args.repeat})")
    for name, (nb, npy, inputs) in kernel_inputs(args.scale).items():
        compare(name, nb, npy, inputs, args.repeat)

    n = 10_000 * args.scale
    t = fit_timings(n)
    print(f"\nHGB regression fit, {n} rows x 6, 100 iterations (JIT warmed)")
    print(f"numba {t['numba']:.2f} s  numpy {t['numpy']:.2f} s  "
          f"speedup {t['numpy'] / t['numba']:.1f}x")


if __name__ == "__main__":
    main()
