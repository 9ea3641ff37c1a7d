"""Per-job queue-state reconstruction and feature scaling.

For a job submitted at ``t`` the queue state is read off the other jobs in
the same queue:

* backlog: submitted at or before ``t`` and not yet started (``start > t``)
* running: ``start <= t < end``

Both sets use half-open intervals so that queued / running / finished
partition the jobs at every instant.
"""
from __future__ import annotations

import io
from dataclasses import astuple, dataclass

import numpy as np

from qsage._accel import njit, pick
from qsage.ingest import JobRecord

FEATURE_NAMES = (
    "num_nodes",
    "max_minutes",
    "backlog_num_jobs",
    "backlog_minutes",
    "running_num_jobs",
    "running_minutes",
)
CSV_HEADER = ("submit_ts",) + FEATURE_NAMES + ("label_queue_minutes",)
N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True)
class FeatureRow:
    submit_time: int
    num_nodes: int
    max_minutes: int
    backlog_num_jobs: int
    backlog_minutes: float
    running_num_jobs: int
    running_minutes: float
    label_queue_minutes: float

    @property
    def features(self) -> tuple:
        return astuple(self)[1:7]


@dataclass(frozen=True)
class ScalerStats:
    mean: tuple
    std: tuple

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        mean = np.asarray(self.mean)
        std = np.asarray(self.std)
        safe = np.where(std > 0, std, 1.0)
        return np.where(std > 0, (X - mean) / safe, 0.0)

    def to_dict(self):
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(float(v) for v in d["mean"]), tuple(float(v) for v in d["std"]))


# -- queue-state kernels ----------------------------------------------------
#
# Inputs are sorted by (submit, job_id). Outputs are exact: weights are
# integral minutes, so float64 prefix sums carry no rounding.

@njit(cache=False)
def _state_sweep_numba(sub, start, end, weight):
    n = sub.shape[0]
    start_order = np.argsort(start, kind="mergesort")
    end_order = np.argsort(end, kind="mergesort")
    out_cnt = np.zeros((n, 2), dtype=np.int64)
    out_min = np.zeros((n, 2), dtype=np.float64)
    i_sub = 0
    i_start = 0
    i_end = 0
    n_sub = 0
    w_sub = 0.0
    n_start = 0
    w_start = 0.0
    n_end = 0
    w_end = 0.0
    for j in range(n):
        t = sub[j]
        while i_sub < n and sub[i_sub] <= t:
            n_sub += 1
            w_sub += weight[i_sub]
            i_sub += 1
        while i_start < n and start[start_order[i_start]] <= t:
            n_start += 1
            w_start += weight[start_order[i_start]]
            i_start += 1
        while i_end < n and end[end_order[i_end]] <= t:
            n_end += 1
            w_end += weight[end_order[i_end]]
            i_end += 1
        b_cnt = n_sub - n_start
        b_min = w_sub - w_start
        r_cnt = n_start - n_end
        r_min = w_start - w_end
        if start[j] > t:
            b_cnt -= 1
            b_min -= weight[j]
        elif end[j] > t:
            r_cnt -= 1
            r_min -= weight[j]
        out_cnt[j, 0] = b_cnt
        out_cnt[j, 1] = r_cnt
        out_min[j, 0] = b_min
        out_min[j, 1] = r_min
    return out_cnt, out_min


def _state_sweep_numpy(sub, start, end, weight):
    def prefix(times):
        order = np.argsort(times, kind="mergesort")
        sorted_t = times[order]
        cum = np.concatenate(([0.0], np.cumsum(weight[order])))
        k = np.searchsorted(sorted_t, sub, side="right")
        return k, cum[k]

    n_sub, w_sub = prefix(sub)
    n_start, w_start = prefix(start)
    n_end, w_end = prefix(end)
    queued_self = start > sub
    running_self = ~queued_self & (end > sub)
    b_cnt = n_sub - n_start - queued_self
    b_min = w_sub - w_start - np.where(queued_self, weight, 0.0)
    r_cnt = n_start - n_end - running_self
    r_min = w_start - w_end - np.where(running_self, weight, 0.0)
    return (np.stack([b_cnt, r_cnt], axis=1).astype(np.int64),
            np.stack([b_min, r_min], axis=1))


state_sweep = pick(_state_sweep_numba, _state_sweep_numpy)


def _sorted_by_submit(records):
    return sorted(records, key=lambda r: (r.submit_time, r.job_id))


def reconstruct_queue_state(records: list[JobRecord], node_weighted: bool = False) -> list[FeatureRow]:
    """One :class:`FeatureRow` per job, ordered by (submit_time, job_id).

    With ``node_weighted`` the minute totals weigh each job by its node
    count (``max_minutes * num_nodes``) instead of plain requested minutes.
    """
    queues = {r.queue for r in records}
    if len(queues) > 1:
        raise ValueError(f"records span several queues: {sorted(queues)}")
    if not records:
        return []
    recs = _sorted_by_submit(records)
    sub = np.array([r.submit_time for r in recs], dtype=np.int64)
    start = np.array([r.start_time for r in recs], dtype=np.int64)
    end = np.array([r.end_time for r in recs], dtype=np.int64)
    weight = np.array([r.max_minutes * (r.num_nodes if node_weighted else 1) for r in recs],
                      dtype=np.float64)
    cnt, mins = state_sweep(sub, start, end, weight)
    return [
        FeatureRow(r.submit_time, r.num_nodes, r.max_minutes,
                   int(cnt[i, 0]), float(mins[i, 0]), int(cnt[i, 1]), float(mins[i, 1]),
                   r.queue_time_minutes)
        for i, r in enumerate(recs)
    ]


def brute_force_state(records: list[JobRecord], node_weighted: bool = False) -> list[tuple]:
    """Quadratic reference scan; same ordering as :func:`reconstruct_queue_state`."""
    recs = _sorted_by_submit(records)
    out = []
    for j, rj in enumerate(recs):
        t = rj.submit_time
        bn = rn = 0
        bm = rm = 0.0
        for i, ri in enumerate(recs):
            if i == j:
                continue
            w = ri.max_minutes * (ri.num_nodes if node_weighted else 1)
            if ri.submit_time <= t < ri.start_time:
                bn += 1
                bm += w
            elif ri.start_time <= t < ri.end_time:
                rn += 1
                rm += w
        out.append((bn, bm, rn, rm))
    return out


def feature_matrix(rows: list[FeatureRow]) -> np.ndarray:
    if not rows:
        return np.zeros((0, N_FEATURES))
    return np.array([r.features for r in rows], dtype=np.float64)


def labels(rows: list[FeatureRow]) -> np.ndarray:
    return np.array([r.label_queue_minutes for r in rows], dtype=np.float64)


def fit_scaler(X) -> ScalerStats:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("cannot fit scaler on an empty training set")
    return ScalerStats(tuple(float(v) for v in X.mean(axis=0)),
                       tuple(float(v) for v in X.std(axis=0)))


def standardize(train: list[FeatureRow], apply_to: list[FeatureRow]):
    """Z-score ``apply_to`` with statistics of ``train``.

    Returns ``(stats, matrix)``; zero-variance features map to 0. Labels are
    not touched (read them with :func:`labels`).
    """
    stats = fit_scaler(feature_matrix(train))
    return stats, stats.transform(feature_matrix(apply_to))


# -- CSV --------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[FeatureRow]) -> str:
    out = io.StringIO()
    out.write(",".join(CSV_HEADER) + "\n")
    for r in rows:
        out.write(",".join(_fmt(v) for v in astuple(r)) + "\n")
    return out.getvalue()


def rows_from_csv(text: str) -> list[FeatureRow]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or tuple(h.strip() for h in lines[0].split(",")) != CSV_HEADER:
        raise ValueError("feature CSV: bad or missing header")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        f = line.split(",")
        if len(f) != len(CSV_HEADER):
            raise ValueError(f"feature CSV line {lineno}: expected {len(CSV_HEADER)} fields")
        rows.append(FeatureRow(int(f[0]), int(f[1]), int(f[2]), int(f[3]), float(f[4]),
                               int(f[5]), float(f[6]), float(f[7])))
    return rows
