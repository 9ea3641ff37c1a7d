"""Sliding windows, current/future splits, metrics, resumable model search, report.

Each window is split into a chronologically last *future* slice and a
*current* slice; current is shuffled and split into train/test. A model is
fitted on train and scored on test and future separately. Search results
are appended, one JSON object per line, to a ledger that doubles as the
resume checkpoint.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from qsage.features import FeatureRow, feature_matrix, fit_scaler, labels
from qsage.models import BinSpec, ModelSpec, assign_bins, fit

DAY = 86400
MIN_WINDOW_ROWS = 10
LEDGER_NAME = "ledger.jsonl"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WindowSpec:
    mode: str = "by_days"
    size: int = 30
    current_fraction: float = 0.9
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("by_days", "by_jobs"):
            raise ValueError(f"window mode must be by_days or by_jobs, got {self.mode!r}")
        if isinstance(self.size, bool) or int(self.size) != self.size or self.size < 1:
            raise ValueError("window size must be a positive integer")
        for name in ("current_fraction", "train_fraction"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie strictly between 0 and 1")


@dataclass(frozen=True)
class Window:
    """Rows ``[lo, hi)`` of the sorted row sequence."""
    index: int
    lo: int
    hi: int

    def __len__(self):
        return self.hi - self.lo


@dataclass(frozen=True)
class SplitResult:
    train: np.ndarray
    test: np.ndarray
    future: np.ndarray


def make_windows(rows: list[FeatureRow], spec: WindowSpec) -> list[Window]:
    """Consecutive non-overlapping windows over submit-time-sorted rows.

    A trailing partial window is kept when it reaches half the window size
    (in days of span or in jobs), and always when it is the only window.
    """
    if not rows:
        raise ValueError("no rows to window")
    ts = np.array([r.submit_time for r in rows], dtype=np.int64)
    if np.any(np.diff(ts) < 0):
        raise ValueError("rows must be sorted by submit_time")
    n = len(rows)
    bounds = []
    if spec.mode == "by_jobs":
        for lo in range(0, n, spec.size):
            hi = min(lo + spec.size, n)
            complete = hi - lo == spec.size
            bounds.append((lo, hi, complete or (hi - lo) >= 0.5 * spec.size))
    else:
        width = spec.size * DAY
        t0 = int(ts[0])
        n_slots = (int(ts[-1]) - t0) // width + 1
        for k in range(n_slots):
            start = t0 + k * width
            lo = int(np.searchsorted(ts, start, side="left"))
            hi = int(np.searchsorted(ts, start + width, side="left"))
            if hi == lo:
                continue
            complete = hi < n or int(ts[-1]) >= start + width
            bounds.append((lo, hi, complete or (int(ts[-1]) - start) >= 0.5 * width))
    if len(bounds) > 1 and not bounds[-1][2]:
        bounds.pop()
    return [Window(i, lo, hi) for i, (lo, hi, _) in enumerate(bounds)]


def split_window(window: Window, rows: list[FeatureRow], spec: WindowSpec) -> SplitResult:
    """Indices (into ``rows``) of the train / test / future parts of a window.

    Rows sharing the submit timestamp at the current/future boundary all go
    to future, so every current job was submitted strictly before every
    future job.
    """
    n = len(window)
    if n < MIN_WINDOW_ROWS:
        raise ValueError(f"window {window.index} has {n} rows; need at least {MIN_WINDOW_ROWS}")
    n_future = math.ceil(round((1.0 - spec.current_fraction) * n, 9))
    cut = window.lo + n - n_future
    boundary = rows[cut].submit_time
    while cut > window.lo and rows[cut - 1].submit_time == boundary:
        cut -= 1
    current = np.arange(window.lo, cut, dtype=np.int64)
    future = np.arange(cut, window.hi, dtype=np.int64)
    rng = np.random.default_rng([spec.seed, window.index])
    current = current[rng.permutation(current.size)]
    n_train = int(round(spec.train_fraction * current.size))
    train, test = current[:n_train], current[n_train:]
    if train.size == 0 or test.size == 0 or future.size == 0:
        raise ValueError(f"window {window.index} too small for a non-empty train/test/future split")
    return SplitResult(train, test, future)


# -- metrics ------------------------------------------------------------------------

def regression_metrics(y_true, y_pred) -> dict:
    """``r2`` is None when ``y_true`` is constant and the fit is not exact."""
    yt = np.asarray(y_true, dtype=np.float64)
    yp = np.asarray(y_pred, dtype=np.float64)
    if yt.shape != yp.shape or yt.ndim != 1 or yt.size == 0:
        raise ValueError("need two equal-length, non-empty vectors")
    resid = yt - yp
    ss_res = float(resid @ resid)
    dev = yt - yt.mean()
    ss_tot = float(dev @ dev)
    if ss_tot == 0:
        r2 = 1.0 if ss_res == 0 else None
    else:
        r2 = 1.0 - ss_res / ss_tot
    return {"r2": r2, "mae": float(np.mean(np.abs(resid))), "rmse": math.sqrt(ss_res / yt.size)}


def classification_metrics(bins_true, bins_pred, n_bins: int) -> dict:
    """Accuracy, recall on the top bin and recall per bin (None for absent bins)."""
    bt = np.asarray(bins_true, dtype=np.int64)
    bp = np.asarray(bins_pred, dtype=np.int64)
    if bt.shape != bp.shape or bt.ndim != 1 or bt.size == 0:
        raise ValueError("need two equal-length, non-empty vectors")
    for arr in (bt, bp):
        if arr.min() < 1 or arr.max() > n_bins:
            raise ValueError(f"bin index outside 1..{n_bins}")
    hit = bt == bp
    per_bin = {}
    for b in range(1, n_bins + 1):
        mask = bt == b
        per_bin[str(b)] = float(hit[mask].mean()) if mask.any() else None
    return {"accuracy": float(hit.mean()), "last_bin_accuracy": per_bin[str(n_bins)],
            "per_bin_accuracy": per_bin}


def majority_baseline_accuracy(bins_train, bins_eval) -> float:
    """Accuracy of always predicting the most common training bin (smallest on ties)."""
    values, counts = np.unique(np.asarray(bins_train), return_counts=True)
    guess = values[np.argmax(counts)]
    return float(np.mean(np.asarray(bins_eval) == guess))


# -- search ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchConfig:
    dataset_path: str
    queue: str
    window: WindowSpec
    seed: int
    models: tuple
    bins: BinSpec | None
    output_dir: str
    outlier_threshold_minutes: float = 2880
    node_weighted: bool = False

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".", seed_override: int | None = None):
        try:
            return cls._from_dict(d, base_dir, seed_override)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid search config: {exc!r}") from None

    @classmethod
    def _from_dict(cls, d, base_dir, seed_override):
        missing = {"dataset_path", "queue", "window", "seed", "models", "output_dir"} - set(d)
        if missing:
            raise ConfigError(f"search config missing keys: {sorted(missing)}")
        seed = int(d["seed"]) if seed_override is None else int(seed_override)
        w = dict(d["window"])
        window = WindowSpec(w.get("mode", "by_days"), w["size"], float(w.get("current_fraction", 0.9)),
                            float(w.get("train_fraction", 0.8)), seed)
        if not d["models"]:
            raise ConfigError("search config lists no models")
        models = []
        for m in d["models"]:
            grid = m.get("grid", {}) or {}
            for name, values in grid.items():
                if not isinstance(values, list) or not values:
                    raise ConfigError(f"grid entry {name!r} must be a non-empty list")
            models.append({"family": m["family"], "task": m.get("task", "regression"),
                           "grid": {k: list(v) for k, v in grid.items()}})
        bins = BinSpec(float(d["bins"]["size"]), int(d["bins"]["count"])) if d.get("bins") else None
        cfg = cls(
            dataset_path=os.path.join(base_dir, d["dataset_path"]),
            queue=str(d["queue"]),
            window=window,
            seed=seed,
            models=tuple(models),
            bins=bins,
            output_dir=os.path.join(base_dir, d["output_dir"]),
            outlier_threshold_minutes=float(d.get("outlier_threshold_minutes", 2880)),
            node_weighted=bool(d.get("node_weighted", False)),
        )
        specs = cfg.model_specs()
        if any(s.task == "classification" for s in specs) and bins is None:
            raise ConfigError("classification models need a 'bins' entry")
        return cfg

    def model_specs(self) -> list[ModelSpec]:
        """Expand every grid into concrete specs (keys sorted, values in listed order)."""
        specs = []
        for m in self.models:
            keys = sorted(m["grid"])
            for combo in itertools.product(*(m["grid"][k] for k in keys)):
                specs.append(ModelSpec(m["family"], m["task"], dict(zip(keys, combo)), self.seed))
        return specs

    @property
    def ledger_path(self):
        return os.path.join(self.output_dir, LEDGER_NAME)


@dataclass
class EvalRecord:
    cell_id: str
    queue: str
    window: int
    split: str
    spec: dict
    task: str
    metrics: dict
    n_train: int = 0
    n_eval: int = 0
    status: str = "ok"
    error: str | None = None
    wall_time_s: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def family(self):
        return self.spec["family"]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "EvalRecord":
        return cls(**json.loads(line))


def cell_id(queue: str, window: Window, spec: ModelSpec) -> str:
    digest = hashlib.sha1(spec.key().encode()).hexdigest()[:12]
    return f"{queue}/w{window.index}/{spec.family}-{spec.task}-{digest}"


def evaluate_cell(rows: list[FeatureRow], window: Window, spec: ModelSpec, wspec: WindowSpec,
                  bins: BinSpec | None, queue: str) -> list[EvalRecord]:
    """Fit on the window's train part; one record for test, one for future."""
    cid = cell_id(queue, window, spec)
    t0 = time.perf_counter()
    try:
        split = split_window(window, rows, wspec)
        X = feature_matrix(rows)
        y = labels(rows)
        scaler = fit_scaler(X[split.train])
        if spec.task == "classification":
            target = assign_bins(y, bins)
            model = fit(spec, X[split.train], target[split.train], scaler=scaler, bin_spec=bins)
        else:
            target = y
            model = fit(spec, X[split.train], y[split.train], scaler=scaler)
        out = []
        for name, idx in (("test", split.test), ("future", split.future)):
            pred = model.predict(X[idx])
            if spec.task == "classification":
                metrics = classification_metrics(target[idx], pred, bins.n_bins)
                extra = {"majority_baseline": majority_baseline_accuracy(target[split.train],
                                                                         target[idx])}
            else:
                metrics = regression_metrics(target[idx], pred)
                extra = {}
            out.append(EvalRecord(cid, queue, window.index, name, spec.to_dict(), spec.task,
                                  metrics, int(split.train.size), int(idx.size), extra=extra))
    except Exception as exc:  # a failed cell must not stop the search
        out = [EvalRecord(cid, queue, window.index, name, spec.to_dict(), spec.task, {},
                          status="failed", error=f"{type(exc).__name__}: {exc}")
               for name in ("test", "future")]
    elapsed = time.perf_counter() - t0
    for r in out:
        r.wall_time_s = elapsed
    return out


def read_ledger(path) -> list[EvalRecord]:
    if not os.path.exists(path):
        return []
    with open(path, encoding="utf-8") as fh:
        return [EvalRecord.from_json(line) for line in fh if line.strip()]


_WORKER = {}


def _init_worker(rows, wspec, bins, queue):
    _WORKER.update(rows=rows, wspec=wspec, bins=bins, queue=queue)


def _run_cell(task):
    window, spec = task
    w = _WORKER
    return evaluate_cell(w["rows"], window, spec, w["wspec"], w["bins"], w["queue"])


@dataclass
class SearchOutcome:
    records: list
    n_cells: int
    n_run: int
    n_skipped: int
    ledger_path: str


def run_search(config: SearchConfig, rows: list[FeatureRow], jobs: int = 1,
               max_cells: int | None = None) -> SearchOutcome:
    """Evaluate every (window, spec) cell not already in the ledger.

    Records are appended in canonical cell order regardless of ``jobs``,
    so the ledger is identical for serial and parallel runs. ``max_cells``
    stops after that many new cells (used to exercise resume).
    """
    specs = config.model_specs()
    windows = make_windows(rows, config.window)
    cells = [(w, s) for w in windows for s in specs]
    os.makedirs(config.output_dir, exist_ok=True)
    existing = read_ledger(config.ledger_path)
    done = {}
    for r in existing:
        done.setdefault(r.cell_id, set()).add(r.split)
    pending = [c for c in cells if done.get(cell_id(config.queue, *c)) != {"test", "future"}]
    if max_cells is not None:
        pending = pending[:max_cells]

    new = []
    with open(config.ledger_path, "a", encoding="utf-8") as ledger:
        def append(records):
            for r in records:
                ledger.write(r.to_json() + "\n")
            ledger.flush()
            new.extend(records)

        if jobs > 1 and len(pending) > 1:
            with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                     initargs=(rows, config.window, config.bins,
                                               config.queue)) as pool:
                for records in pool.map(_run_cell, pending):
                    append(records)
        else:
            for window, spec in pending:
                append(evaluate_cell(rows, window, spec, config.window, config.bins, config.queue))

    return SearchOutcome(existing + new, len(cells), len(pending), len(cells) - len(pending),
                         config.ledger_path)


def strip_wall_time(ledger_text: str) -> str:
    """Ledger text with the timing field zeroed, for reproducibility checks."""
    out = []
    for line in ledger_text.splitlines():
        if line.strip():
            d = json.loads(line)
            d["wall_time_s"] = 0.0
            out.append(json.dumps(d, sort_keys=True))
    return "\n".join(out)


# -- report -----------------------------------------------------------------------------

_COLUMNS = ("Queue", "Split", "#W", "Alg.", "r2Score", "MAE", "RMSE", "Alg.", "Acc.", "LastbinAcc")
_FAMILY_LABEL = {"hgb": "HGB", "knn": "kNN", "linear": "LinReg", "logistic": "LogReg",
                 "random_forest": "RF"}


def _mean(values):
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def _fmt(v):
    return "" if v is None else f"{round(v, 4):g}"


def _best_spec(records, key):
    """Mean metrics per spec over windows; the spec with the highest mean ``key`` wins."""
    by_spec = {}
    for r in records:
        by_spec.setdefault(json.dumps(r.spec, sort_keys=True), []).append(r)
    best = None
    for spec_key in sorted(by_spec):
        group = by_spec[spec_key]
        score = _mean(r.metrics.get(key) for r in group)
        cand = (score if score is not None else -math.inf, spec_key, group)
        if best is None or cand[0] > best[0]:
            best = cand
    return best[2]


def summarize(records: list[EvalRecord]) -> list[dict]:
    ok = [r for r in records if r.status == "ok"]
    groups = {}
    for r in ok:
        groups.setdefault((r.queue, r.split, r.family), {}).setdefault(r.task, []).append(r)
    split_order = {"test": 0, "future": 1}
    rows = []
    for (queue, split, family) in sorted(groups, key=lambda k: (k[0], split_order.get(k[1], 9), k[1], k[2])):
        g = groups[(queue, split, family)]
        row = {"queue": queue, "split": split, "family": family, "n_windows": 0,
               "regression": None, "classification": None}
        if "regression" in g:
            recs = _best_spec(g["regression"], "r2")
            row["regression"] = {k: _mean(r.metrics.get(k) for r in recs) for k in ("r2", "mae", "rmse")}
            row["n_windows"] = max(row["n_windows"], len({r.window for r in recs}))
        if "classification" in g:
            recs = _best_spec(g["classification"], "accuracy")
            row["classification"] = {k: _mean(r.metrics.get(k) for r in recs)
                                     for k in ("accuracy", "last_bin_accuracy")}
            row["n_windows"] = max(row["n_windows"], len({r.window for r in recs}))
        rows.append(row)
    return rows


def render_report(records: list[EvalRecord]) -> str:
    """Fixed-width table: one row per (queue, split, model family), metrics
    averaged over windows (best grid point per family)."""
    table = [list(_COLUMNS)]
    for row in summarize(records):
        reg, cls = row["regression"], row["classification"]
        label = _FAMILY_LABEL.get(row["family"], row["family"])
        table.append([
            row["queue"], row["split"], str(row["n_windows"]),
            label if reg else "", _fmt(reg and reg["r2"]), _fmt(reg and reg["mae"]),
            _fmt(reg and reg["rmse"]),
            label if cls else "", _fmt(cls and cls["accuracy"]),
            _fmt(cls and cls["last_bin_accuracy"]),
        ])
    widths = [max(len(r[i]) for r in table) for i in range(len(_COLUMNS))]
    lines = ["Evaluation results (mean over windows)"]
    for i, r in enumerate(table):
        lines.append(" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        if i == 0:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
