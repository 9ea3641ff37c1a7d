import json

import numpy as np
import pytest

from qsage import decision as dc
from qsage.decision import (And, Compare, ConstraintEvalError, ConstraintSyntaxError, Not, Or,
                            QueueDescriptor, ScoredCandidate, SystemDescriptor, ToleranceParams)
from qsage.models import BinSpec, ModelSpec, fit, save_model


class Stub:
    """Predicts requested minutes plus ten minutes per backlogged job."""
    n_features = 6

    def predict(self, X):
        X = np.atleast_2d(X)
        return X[:, 1] + 10 * X[:, 2]


def snap(backlog_jobs, backlog_min=0, running=0, running_min=0):
    return {"backlog_num_jobs": backlog_jobs, "backlog_minutes": backlog_min,
            "running_num_jobs": running, "running_minutes": running_min}


# -- parsing ----------------------------------------------------------------------------

def test_precedence_and_grouping():
    e = dc.parse_constraint('a == 1 || b == 2 && !c < 3')
    assert e == Or((Compare("a", "==", 1.0),
                    And((Compare("b", "==", 2.0), Not(Compare("c", "<", 3.0))))))
    g = dc.parse_constraint('(a == 1 || b == 2) && c >= -1.5e1')
    assert isinstance(g, And) and g.items[1] == Compare("c", ">=", -15.0)


def test_literals_and_identifiers():
    e = dc.parse_constraint('gpu.model != "A100 \\"sxm\\"" && arch-name == "x86-64"')
    assert e.items[0] == Compare("gpu.model", "!=", 'A100 "sxm"')
    assert e.items[1] == Compare("arch-name", "==", "x86-64")


@pytest.mark.parametrize("text,offset", [
    ("a ==", 4),
    ("a == 1 &&", 9),
    ("(a == 1", 7),
    ("a = 1", 2),
    ("a == 1 b", 7),
    ('é == 1', 0),
    ('x == "é" && @', 13),
    ("", 0),
])
def test_syntax_errors_report_byte_offsets(text, offset):
    with pytest.raises(ConstraintSyntaxError) as info:
        dc.parse_constraint(text)
    assert info.value.offset == offset


def test_format_round_trip():
    for text in ['a == 1', '!(a > 2) || (s == "x" && t != "y")', '(a < 1 || b <= 2) && !c >= 3']:
        e = dc.parse_constraint(text)
        assert dc.parse_constraint(dc.format_constraint(e)) == e


# -- evaluation -------------------------------------------------------------------------

def test_missing_attribute_is_false_and_negates_true():
    assert dc.eval_constraint(dc.parse_constraint("gpus > 0"), {}) is False
    assert dc.eval_constraint(dc.parse_constraint("!gpus > 0"), {}) is True
    assert dc.eval_constraint(None, {}) is True


def test_type_mismatch_raises_even_when_outcome_is_decided():
    expr = dc.parse_constraint('arch == "x86-64" || arch > 3')
    with pytest.raises(ConstraintEvalError):
        dc.eval_constraint(expr, {"arch": "x86-64"})
    with pytest.raises(ConstraintEvalError):
        dc.eval_constraint(dc.parse_constraint('n == "4"'), {"n": 4})
    with pytest.raises(ConstraintEvalError):
        dc.eval_constraint(dc.parse_constraint('flag == 1'), {"flag": True})


def test_string_ordering_is_lexicographic():
    assert dc.eval_constraint(dc.parse_constraint('v >= "b"'), {"v": "c"})
    assert not dc.eval_constraint(dc.parse_constraint('v < "b"'), {"v": "c"})


# -- scoring and recommendation ---------------------------------------------------------

def make_systems():
    q = lambda name, nodes=16, mins=240, **kw: QueueDescriptor(name, nodes, mins, Stub(), **kw)  # noqa: E731
    return [
        SystemDescriptor("alpha", {"arch": "x86-64", "gpus": 4},
                         (q("normal"), q("small", nodes=2), q("short", mins=60))),
        SystemDescriptor("beta", {"arch": "arm64"}, (q("normal"),)),
        SystemDescriptor("gamma", {"arch": 7}, (q("normal"),)),
        SystemDescriptor("delta", {"arch": "x86-64"}, (q("normal", bin_spec=BinSpec(30, 4)),)),
    ]


SNAPS = {("alpha", "normal"): snap(3), "alpha/small": snap(0), "alpha/short": snap(0),
         "beta/normal": snap(0), "gamma/normal": snap(0)}


def test_score_candidates_filters_and_reports():
    request = {"num_nodes": 4, "max_minutes": 120, "constraint": 'arch == "x86-64"'}
    scored, skipped = dc.score_candidates(request, make_systems(), SNAPS)
    assert [(c.system_id, c.queue, c.predicted_q) for c in scored] == [("alpha", "normal", 150.0)]
    assert any(s.startswith("gamma") and "infeasible" in s for s in skipped)
    assert any(s.startswith("delta/normal") for s in skipped)
    open_request = dict(request, constraint="")
    scored, _ = dc.score_candidates(open_request, make_systems()[:2], SNAPS)
    assert {(c.system_id, c.queue) for c in scored} == {("alpha", "normal"), ("beta", "normal")}


def test_bins_from_queue_spec():
    snaps = {"delta/normal": snap(2)}
    scored, _ = dc.score_candidates({"num_nodes": 1, "max_minutes": 30}, make_systems()[3:], snaps)
    assert scored == [ScoredCandidate("delta", "normal", 50.0, 2)]


def test_recommend_rule_and_ties():
    params = ToleranceParams(30, 2)
    cands = [ScoredCandidate("b", "q", 40.0), ScoredCandidate("a", "z", 40.0),
             ScoredCandidate("a", "y", 40.0), ScoredCandidate("c", "q", 130.0)]
    rec = dc.recommend(cands, params)
    assert rec.decision == dc.RUN_ON and rec.target == ("a", "y") and rec.q_star == 40.0
    assert [c.predicted_bin for c in rec.candidates] == [1, 1, 1, 3]
    rec = dc.recommend([ScoredCandidate("a", "q", 60.000001)], params)
    assert rec.decision == dc.PROVISION and rec.target is None
    empty = dc.recommend([], params)
    assert empty.no_candidates and empty.q_star is None
    json.dumps(rec.to_dict())


def test_tolerance_params_validation():
    with pytest.raises(ValueError):
        ToleranceParams(0, 2)
    with pytest.raises(ValueError):
        ToleranceParams(30, -1)


def test_bin_candidacy_strengths():
    assert [dc.bin_candidacy(b, 4).strength for b in (2, 3, 4)] == [1 / 3, 2 / 3, 1.0]
    assert dc.bin_candidacy(2, 2).strength == 1.0
    with pytest.raises(ValueError):
        dc.bin_candidacy(5, 4)


# -- files ------------------------------------------------------------------------------

def test_registry_and_snapshots(tmp_path):
    X = np.random.default_rng(0).normal(size=(50, 6))
    save_model(fit(ModelSpec("linear"), X, X[:, 3]), tmp_path / "m.json")
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "reg.json").write_text(json.dumps([
        {"system_id": "s", "attributes": {"arch": "x"},
         "queues": [{"name": "q", "max_nodes": 4, "max_minutes": 60, "model": "../m.json",
                     "bins": {"size": 30, "count": 4}}]}]))
    systems = dc.load_registry(tmp_path / "sub" / "reg.json")
    assert systems[0].queues[0].bin_spec == BinSpec(30, 4)
    (tmp_path / "snap.json").write_text(json.dumps({"s/q": snap(1, 45)}))
    snaps = dc.load_snapshots(tmp_path / "snap.json")
    scored, _ = dc.score_candidates({"num_nodes": 1, "max_minutes": 10}, systems, snaps)
    assert scored[0].predicted_q == pytest.approx(45.0)
    assert scored[0].predicted_bin == 2
    (tmp_path / "bad.json").write_text(json.dumps({"sq": snap(1)}))
    with pytest.raises(ValueError):
        dc.load_snapshots(tmp_path / "bad.json")
    (tmp_path / "bad2.json").write_text(json.dumps({"s/q": {"backlog_num_jobs": 1}}))
    with pytest.raises(ValueError):
        dc.load_snapshots(tmp_path / "bad2.json")


def test_queue_model_width_checked():
    class Narrow:
        n_features = 4

    with pytest.raises(ValueError):
        QueueDescriptor("q", 1, 1, Narrow())
