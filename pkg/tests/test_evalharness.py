import json

import numpy as np
import pytest

from qsage import evalharness as eh
from qsage import features
from qsage.evalharness import ConfigError, EvalRecord, SearchConfig, Window, WindowSpec
from qsage.features import FeatureRow

from conftest import random_log

DAY = 86400


def rows_at(times, label=lambda i: float(i % 7)):
    return [FeatureRow(int(t), 1, 10, i % 3, float(i % 5), i % 2, 1.0, label(i))
            for i, t in enumerate(times)]


# -- windows ----------------------------------------------------------------------------

def test_by_jobs_windows_drop_short_tail():
    rows = rows_at(range(249))
    ws = eh.make_windows(rows, WindowSpec("by_jobs", 100))
    assert [(w.lo, w.hi) for w in ws] == [(0, 100), (100, 200)]
    rows = rows_at(range(250))
    ws = eh.make_windows(rows, WindowSpec("by_jobs", 100))
    assert [(w.lo, w.hi) for w in ws] == [(0, 100), (100, 200), (200, 250)]


def test_single_short_window_is_kept():
    ws = eh.make_windows(rows_at(range(30)), WindowSpec("by_jobs", 100))
    assert [(w.lo, w.hi) for w in ws] == [(0, 30)]


def test_by_days_windows():
    times = [d * DAY + h * 3600 for d in range(70) for h in (1, 13)]
    ws = eh.make_windows(rows_at(times), WindowSpec("by_days", 30))
    assert [len(w) for w in ws] == [60, 60]
    times = [d * DAY for d in range(80)]
    ws = eh.make_windows(rows_at(times), WindowSpec("by_days", 30))
    assert [len(w) for w in ws] == [30, 30, 20]


def test_unsorted_rows_rejected():
    with pytest.raises(ValueError):
        eh.make_windows(rows_at([5, 1]), WindowSpec())


# -- splits -----------------------------------------------------------------------------

def test_split_proportions_and_disjointness():
    rows = rows_at(range(1000))
    s = eh.split_window(Window(0, 0, 1000), rows, WindowSpec())
    assert (s.train.size, s.test.size, s.future.size) == (720, 180, 100)
    assert s.future.tolist() == list(range(900, 1000))
    assert len(set(s.train) | set(s.test) | set(s.future)) == 1000


def test_future_extends_over_timestamp_ties():
    times = list(range(95)) + [95] * 10
    rows = rows_at(times)
    s = eh.split_window(Window(0, 0, len(rows)), rows, WindowSpec())
    # ceil(0.1 * 105) = 11 rows, the boundary timestamp is shared by 10, plus one earlier
    assert s.future.size == 11
    times = list(range(90)) + [90] * 15
    s = eh.split_window(Window(0, 0, 105), rows_at(times), WindowSpec())
    assert s.future.size == 15
    current = np.concatenate([s.train, s.test])
    assert max(times[i] for i in current) < 90


def test_split_seeded_per_window():
    rows = rows_at(range(400))
    spec = WindowSpec("by_jobs", 200, seed=3)
    a = eh.split_window(Window(0, 0, 200), rows, spec)
    b = eh.split_window(Window(0, 0, 200), rows, spec)
    assert np.array_equal(a.train, b.train)
    c = eh.split_window(Window(0, 0, 200), rows, WindowSpec("by_jobs", 200, seed=4))
    assert not np.array_equal(a.train, c.train)


def test_tiny_window_rejected():
    with pytest.raises(ValueError):
        eh.split_window(Window(0, 0, 9), rows_at(range(9)), WindowSpec())


def test_window_spec_validation():
    with pytest.raises(ValueError):
        WindowSpec("weekly")
    with pytest.raises(ValueError):
        WindowSpec(current_fraction=1.0)
    with pytest.raises(ValueError):
        WindowSpec(size=0)


# -- metrics ----------------------------------------------------------------------------

def test_regression_metrics_edge_cases():
    assert eh.regression_metrics([1, 2, 3], [1, 2, 3]) == {"r2": 1.0, "mae": 0.0, "rmse": 0.0}
    assert eh.regression_metrics([2, 2], [1, 3])["r2"] is None
    assert eh.regression_metrics([2, 2], [2, 2])["r2"] == 1.0
    with pytest.raises(ValueError):
        eh.regression_metrics([1], [1, 2])


def test_classification_metrics_per_bin():
    m = eh.classification_metrics([1, 1, 2, 4], [1, 2, 2, 3], 4)
    assert m["per_bin_accuracy"] == {"1": 0.5, "2": 1.0, "3": None, "4": 0.0}
    assert m["last_bin_accuracy"] == 0.0
    assert eh.classification_metrics([1], [1], 4)["last_bin_accuracy"] is None
    with pytest.raises(ValueError):
        eh.classification_metrics([5], [1], 4)


def test_majority_baseline_breaks_ties_low():
    assert eh.majority_baseline_accuracy([2, 2, 3, 3], [2, 3, 3]) == 1 / 3


# -- search -----------------------------------------------------------------------------

def search_doc(**over):
    doc = {"dataset_path": "rows.csv", "queue": "normal", "seed": 1,
           "window": {"mode": "by_jobs", "size": 400},
           "bins": {"size": 20, "count": 4},
           "models": [{"family": "linear"},
                      {"family": "knn", "grid": {"k": [3, 500]}},
                      {"family": "hgb", "task": "classification",
                       "grid": {"max_iterations": [5], "max_depth": [2, 3]}}],
           "output_dir": "out"}
    doc.update(over)
    return doc


@pytest.fixture
def search_rows():
    return features.reconstruct_queue_state(random_log(3, 1000))


def test_config_relative_paths_and_grid(tmp_path):
    cfg = SearchConfig.from_dict(search_doc(), str(tmp_path))
    assert cfg.dataset_path == str(tmp_path / "rows.csv")
    assert cfg.ledger_path == str(tmp_path / "out" / "ledger.jsonl")
    specs = cfg.model_specs()
    assert [(s.family, s.hyperparameters.get("k"), s.hyperparameters.get("max_depth")) for s in specs] == [
        ("linear", None, None), ("knn", 3, None), ("knn", 500, None), ("hgb", None, 2), ("hgb", None, 3)]
    assert SearchConfig.from_dict(search_doc(), str(tmp_path), seed_override=9).seed == 9


@pytest.mark.parametrize("change", [
    {"models": []},
    {"bins": None},
    {"models": [{"family": "knn", "grid": {"k": []}}]},
    {"models": [{"family": "svm"}]},
    {"window": {"mode": "by_jobs", "size": -1}},
])
def test_config_errors(tmp_path, change):
    with pytest.raises(ConfigError):
        SearchConfig.from_dict(search_doc(**change), str(tmp_path))
    doc = search_doc()
    del doc["queue"]
    with pytest.raises(ConfigError):
        SearchConfig.from_dict(doc, str(tmp_path))


def test_search_records_failures_and_resumes(tmp_path, search_rows):
    cfg = SearchConfig.from_dict(search_doc(), str(tmp_path))
    first = eh.run_search(cfg, search_rows, max_cells=4)
    # 1000 rows in windows of 400: 400, 400 and a 200-row tail
    assert (first.n_cells, first.n_run) == (15, 4)
    second = eh.run_search(cfg, search_rows)
    assert (second.n_run, second.n_skipped) == (11, 4)
    third = eh.run_search(cfg, search_rows)
    assert (third.n_run, third.n_skipped) == (0, 15)

    records = eh.read_ledger(cfg.ledger_path)
    assert len(records) == 30
    failed = [r for r in records if r.status == "failed"]
    assert {r.spec["hyperparameters"]["k"] for r in failed} == {500}
    assert all("k=500" in r.error for r in failed)

    fresh = SearchConfig.from_dict(search_doc(output_dir="fresh"), str(tmp_path))
    eh.run_search(fresh, search_rows)
    strip = lambda p: eh.strip_wall_time(open(p).read())  # noqa: E731
    assert strip(cfg.ledger_path) == strip(fresh.ledger_path)


def test_cell_records_carry_counts_and_baseline(search_rows):
    spec = eh.ModelSpec("hgb", "classification", {"max_iterations": 3})
    window = Window(0, 0, 400)
    test, future = eh.evaluate_cell(search_rows, window, spec, WindowSpec("by_jobs", 400),
                                    eh.BinSpec(20, 4), "normal")
    assert (test.split, future.split) == ("test", "future")
    assert (test.n_train, test.n_eval, future.n_eval) == (288, 72, 40)
    assert 0 <= future.extra["majority_baseline"] <= 1
    assert EvalRecord.from_json(test.to_json()) == test


def test_report_table():
    def rec(family, split, window, task, metrics, k=None):
        hp = {} if k is None else {"k": k}
        return EvalRecord("c", "normal", window, split, {"family": family, "hyperparameters": hp},
                          task, metrics)

    records = [
        rec("hgb", "test", 0, "regression", {"r2": 0.9, "mae": 10.0, "rmse": 20.0}),
        rec("hgb", "test", 1, "regression", {"r2": 0.7, "mae": 30.0, "rmse": 40.0}),
        rec("hgb", "test", 0, "classification", {"accuracy": 0.5, "last_bin_accuracy": None}),
        rec("knn", "future", 0, "regression", {"r2": 0.1, "mae": 1.0, "rmse": 1.0}, k=3),
        rec("knn", "future", 0, "regression", {"r2": 0.2, "mae": 2.0, "rmse": 2.0}, k=5),
    ]
    text = eh.render_report(records)
    lines = text.splitlines()
    assert lines[0] == "Evaluation results (mean over windows)"
    assert [c.strip() for c in lines[1].split("|")] == list(eh._COLUMNS)
    hgb = [c.strip() for c in lines[3].split("|")]
    assert hgb == ["normal", "test", "2", "HGB", "0.8", "20", "30", "HGB", "0.5", ""]
    knn = [c.strip() for c in lines[4].split("|")]
    assert knn[:7] == ["normal", "future", "1", "kNN", "0.2", "2", "2"]
    summary = eh.summarize(records)
    assert summary[0]["classification"]["last_bin_accuracy"] is None
    json.dumps(summary)
