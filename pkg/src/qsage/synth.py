"""Seeded synthetic workloads and a single-partition batch scheduler simulator.

The simulator stands in for a production accounting log: it assigns start
and end times to generated jobs under FCFS or FCFS with EASY backfilling,
and its output is written in the ordinary job-log CSV format.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from qsage.ingest import JobRecord

POLICIES = ("FCFS", "FCFS_EASY_BACKFILL")

# 2022-02-01T00:00:00Z
DEFAULT_START = 1643673600


@dataclass(frozen=True)
class WorkloadConfig:
    n_jobs: int
    arrival_rate_per_hour: float
    node_weights: dict
    minutes_weights: dict
    runtime_min_fraction: float = 0.1
    diurnal_amplitude: float = 0.0
    seed: int = 0
    start_time: int = DEFAULT_START
    queue: str = "normal"

    def __post_init__(self):
        if self.n_jobs < 0:
            raise ValueError("n_jobs must be >= 0")
        if not self.arrival_rate_per_hour > 0:
            raise ValueError("arrival rate must be positive")
        if not 0 <= self.diurnal_amplitude < 1:
            raise ValueError("diurnal_amplitude must lie in [0, 1)")
        if not 0 < self.runtime_min_fraction <= 1:
            raise ValueError("runtime_min_fraction must lie in (0, 1]")
        for name, weights in (("node_weights", self.node_weights),
                              ("minutes_weights", self.minutes_weights)):
            if not weights:
                raise ValueError(f"{name} is empty")
            if any(int(k) < 1 for k in weights):
                raise ValueError(f"{name}: values must be positive integers")
            if any(w < 0 for w in weights.values()):
                raise ValueError(f"{name}: negative weight")
            if not math.isclose(sum(weights.values()), 1.0, abs_tol=1e-9):
                raise ValueError(f"{name}: weights sum to {sum(weights.values())}, not 1")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["node_weights"] = {int(k): float(v) for k, v in d["node_weights"].items()}
        d["minutes_weights"] = {int(k): float(v) for k, v in d["minutes_weights"].items()}
        return cls(**d)


@dataclass(frozen=True)
class ClusterConfig:
    total_nodes: int
    policy: str = "FCFS_EASY_BACKFILL"

    def __post_init__(self):
        if self.total_nodes < 1:
            raise ValueError("total_nodes must be >= 1")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")


@dataclass(frozen=True)
class PendingJob:
    """A generated job before scheduling; ``runtime_s`` is its true run time."""
    job_id: str
    queue: str
    submit_time: int
    num_nodes: int
    max_minutes: int
    runtime_s: int


@dataclass
class ScheduleTrace:
    """Reservation times handed to head-of-queue jobs (first one per job)."""
    reservations: dict = field(default_factory=dict)


def _arrival_offsets(rng, cfg):
    """Seconds after ``start_time`` of each arrival.

    With a diurnal amplitude ``a`` the rate is ``r * (1 + a*sin(2*pi*t/day))``
    (mean ``r``), sampled by thinning a homogeneous process at the peak rate.
    """
    n = cfg.n_jobs
    if cfg.diurnal_amplitude == 0:
        return np.cumsum(rng.exponential(3600.0 / cfg.arrival_rate_per_hour, size=n))
    peak = cfg.arrival_rate_per_hour * (1 + cfg.diurnal_amplitude) / 3600.0
    out = np.empty(0)
    t = 0.0
    while out.size < n:
        batch = t + np.cumsum(rng.exponential(1.0 / peak, size=2 * n))
        t = batch[-1]
        keep = rng.uniform(size=batch.size) * (1 + cfg.diurnal_amplitude) < (
            1 + cfg.diurnal_amplitude * np.sin(2 * np.pi * batch / 86400.0))
        out = np.concatenate((out, batch[keep]))
    return out[:n]


def generate_workload(cfg: WorkloadConfig) -> list[PendingJob]:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_jobs
    if n == 0:
        return []
    submit = cfg.start_time + np.floor(_arrival_offsets(rng, cfg)).astype(np.int64)
    node_vals = np.array(sorted(cfg.node_weights), dtype=np.int64)
    node_p = np.array([cfg.node_weights[k] for k in node_vals])
    min_vals = np.array(sorted(cfg.minutes_weights), dtype=np.int64)
    min_p = np.array([cfg.minutes_weights[k] for k in min_vals])
    nodes = rng.choice(node_vals, size=n, p=node_p / node_p.sum())
    minutes = rng.choice(min_vals, size=n, p=min_p / min_p.sum())
    u = rng.uniform(cfg.runtime_min_fraction, 1.0, size=n)
    runtime = np.maximum(1, np.floor(u * minutes * 60)).astype(np.int64)
    width = len(str(n))
    return [
        PendingJob(f"j{i:0{width}d}", cfg.queue, int(submit[i]), int(nodes[i]), int(minutes[i]),
                   int(runtime[i]))
        for i in range(n)
    ]


def simulate_schedule(jobs: list[PendingJob], cluster: ClusterConfig,
                      trace: ScheduleTrace | None = None) -> list[JobRecord]:
    """Assign start/end times; returns records in (submit_time, job_id) order.

    Backfill decisions use each job's requested wall time as its run-time
    bound; completions use the true run time.
    """
    for j in jobs:
        if j.num_nodes > cluster.total_nodes:
            raise ValueError(f"job {j.job_id} requests {j.num_nodes} nodes; "
                             f"cluster has {cluster.total_nodes}")
        if j.runtime_s > j.max_minutes * 60:
            raise ValueError(f"job {j.job_id} runs longer than its requested wall time")
    order = sorted(jobs, key=lambda j: (j.submit_time, j.job_id))
    easy = cluster.policy == "FCFS_EASY_BACKFILL"
    n = len(order)
    start = [0] * n
    free = cluster.total_nodes
    running = []        # heap of (end, seq)
    bound_end = {}      # seq -> start + requested wall time
    waiting = []        # seqs in submit order
    nxt = 0

    def launch(seq, t):
        nonlocal free
        job = order[seq]
        start[seq] = t
        free -= job.num_nodes
        heapq.heappush(running, (t + job.runtime_s, seq))
        bound_end[seq] = t + job.max_minutes * 60

    def schedule(t):
        nonlocal waiting
        k = 0
        while k < len(waiting) and order[waiting[k]].num_nodes <= free:
            launch(waiting[k], t)
            k += 1
        waiting = waiting[k:]
        if not easy or not waiting or free == 0:
            return
        head = order[waiting[0]]
        avail = free
        shadow = extra = None
        for end_bound, seq in sorted((bound_end[s], s) for _, s in running):
            avail += order[seq].num_nodes
            if avail >= head.num_nodes:
                shadow, extra = end_bound, avail - head.num_nodes
                break
        if trace is not None:
            trace.reservations.setdefault(head.job_id, shadow)
        kept = [waiting[0]]
        for seq in waiting[1:]:
            job = order[seq]
            if job.num_nodes <= free:
                if t + job.max_minutes * 60 <= shadow:
                    launch(seq, t)
                    continue
                if job.num_nodes <= extra:
                    extra -= job.num_nodes
                    launch(seq, t)
                    continue
            kept.append(seq)
        waiting = kept

    while nxt < n or running:
        t_arr = order[nxt].submit_time if nxt < n else None
        t_end = running[0][0] if running else None
        t = t_end if t_arr is None else t_arr if t_end is None else min(t_arr, t_end)
        while running and running[0][0] == t:
            _, seq = heapq.heappop(running)
            free += order[seq].num_nodes
            del bound_end[seq]
        while nxt < n and order[nxt].submit_time == t:
            waiting.append(nxt)
            nxt += 1
        schedule(t)

    return [
        JobRecord(j.job_id, j.queue, j.submit_time, start[i], start[i] + j.runtime_s,
                  j.num_nodes, j.max_minutes)
        for i, j in enumerate(order)
    ]


def simulate(workload: WorkloadConfig, cluster: ClusterConfig) -> list[JobRecord]:
    return simulate_schedule(generate_workload(workload), cluster)
