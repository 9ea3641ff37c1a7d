"""Where should a job run: an existing system/queue, or a freshly provisioned resource?

Systems advertise key/value attributes; a request carries a boolean
constraint over those attributes, e.g. ``arch == "x86-64" && mem_gb >= 192``.
Feasible queues are scored by their queue-time model and the shortest
predicted wait ``q`` is compared with ``p * t`` (provisioning minutes times
tolerance factor): ``q > p*t`` means provision, otherwise run on that queue.
"""
from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from qsage.features import N_FEATURES
from qsage.models import BinSpec, assign_bins, clamp_minutes, load_model

RUN_ON = "RUN_ON"
PROVISION = "PROVISION"
DEFAULT_N_BINS = 4


# -- constraint expressions ----------------------------------------------------------

class ConstraintSyntaxError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class ConstraintEvalError(ValueError):
    """Type mismatch between a literal and the attribute value it is compared with."""


@dataclass(frozen=True)
class Compare:
    attr: str
    op: str
    value: Union[str, float]


@dataclass(frozen=True)
class And:
    items: tuple


@dataclass(frozen=True)
class Or:
    items: tuple


@dataclass(frozen=True)
class Not:
    item: object


ConstraintExpr = Union[Compare, And, Or, Not]

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<op>==|!=|<=|>=|<|>)
  | (?P<and>&&)
  | (?P<or>\|\|)
  | (?P<not>!)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.\-]*)
""", re.VERBOSE)


def _tokenize(text):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ConstraintSyntaxError(f"unexpected character {text[pos]!r}",
                                        len(text[:pos].encode()))
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), len(text[:pos].encode())))
        pos = m.end()
    tokens.append(("end", "", len(text.encode())))
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self, kind, what):
        tok = self.peek()
        if tok[0] != kind:
            found = "end of input" if tok[0] == "end" else repr(tok[1])
            raise ConstraintSyntaxError(f"expected {what}, found {found}", tok[2])
        self.i += 1
        return tok

    def parse(self):
        expr = self.or_()
        self.take("end", "end of input")
        return expr

    def or_(self):
        items = [self.and_()]
        while self.peek()[0] == "or":
            self.i += 1
            items.append(self.and_())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def and_(self):
        items = [self.not_()]
        while self.peek()[0] == "and":
            self.i += 1
            items.append(self.not_())
        return items[0] if len(items) == 1 else And(tuple(items))

    def not_(self):
        if self.peek()[0] == "not":
            self.i += 1
            return Not(self.atom())
        return self.atom()

    def atom(self):
        if self.peek()[0] == "lparen":
            self.i += 1
            expr = self.or_()
            self.take("rparen", "')'")
            return expr
        name = self.take("ident", "attribute name or '('")[1]
        op = self.take("op", "comparison operator")[1]
        kind, text, _ = self.peek()
        if kind == "string":
            self.i += 1
            value = json.loads(text)
        elif kind == "number":
            self.i += 1
            value = float(text)
        else:
            self.take("literal", "string or number literal")
        return Compare(name, op, value)


def parse_constraint(text: str) -> ConstraintExpr:
    """Parse ``||`` / ``&&`` / ``!`` / parentheses over ``attr op literal`` atoms.

    ``!`` binds to a single atom (a comparison or a parenthesised group).
    """
    return _Parser(text).parse()


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


_OPS = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def _compare(node: Compare, attributes):
    if node.attr not in attributes:
        return False
    actual = attributes[node.attr]
    if isinstance(node.value, str):
        if not isinstance(actual, str):
            raise ConstraintEvalError(f"{node.attr}: string literal compared with {actual!r}")
    elif not _is_number(actual):
        raise ConstraintEvalError(f"{node.attr}: numeric comparison on non-numeric {actual!r}")
    return _OPS[node.op](actual, node.value)


def eval_constraint(expr: ConstraintExpr | None, attributes: dict) -> bool:
    """Evaluate every atom (no short-circuit), so a type mismatch anywhere raises."""
    if expr is None:
        return True
    if isinstance(expr, Compare):
        return _compare(expr, attributes)
    if isinstance(expr, Not):
        return not eval_constraint(expr.item, attributes)
    values = [eval_constraint(e, attributes) for e in expr.items]
    return all(values) if isinstance(expr, And) else any(values)


def format_constraint(expr: ConstraintExpr) -> str:
    if isinstance(expr, Compare):
        lit = json.dumps(expr.value) if isinstance(expr.value, str) else repr(expr.value)
        return f"{expr.attr} {expr.op} {lit}"
    if isinstance(expr, Not):
        return f"!({format_constraint(expr.item)})"
    joiner = " && " if isinstance(expr, And) else " || "
    return "(" + joiner.join(format_constraint(e) for e in expr.items) + ")"


# -- systems, candidates, recommendation -------------------------------------------------

@dataclass(frozen=True)
class QueueDescriptor:
    name: str
    max_nodes: int
    max_minutes: int
    model: object
    classifier: object = None
    bin_spec: BinSpec | None = None

    def __post_init__(self):
        if self.max_nodes < 1 or self.max_minutes < 1:
            raise ValueError(f"queue {self.name}: limits must be positive")
        for m in (self.model, self.classifier):
            if m is not None and getattr(m, "n_features", N_FEATURES) != N_FEATURES:
                raise ValueError(f"queue {self.name}: model expects {m.n_features} features, "
                                 f"not {N_FEATURES}")


@dataclass(frozen=True)
class SystemDescriptor:
    system_id: str
    attributes: dict
    queues: tuple = ()


@dataclass(frozen=True)
class ToleranceParams:
    p: float
    t: float

    def __post_init__(self):
        for name in ("p", "t"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a positive finite number")

    @property
    def threshold(self):
        return self.p * self.t


@dataclass(frozen=True)
class ScoredCandidate:
    system_id: str
    queue: str
    predicted_q: float
    predicted_bin: int | None = None

    @property
    def key(self):
        return (self.system_id, self.queue)


@dataclass(frozen=True)
class Candidacy:
    candidate: bool
    strength: float = 0.0

    def __str__(self):
        return f"CANDIDATE({self.strength:g})" if self.candidate else "NOT_CANDIDATE"


@dataclass
class Recommendation:
    decision: str
    target: tuple | None
    q_star: float | None
    threshold: float
    candidates: list = field(default_factory=list)
    no_candidates: bool = False

    def to_dict(self):
        return {
            "decision": self.decision,
            "target": None if self.target is None else {"system": self.target[0],
                                                          "queue": self.target[1]},
            "q_star": self.q_star,
            "threshold": self.threshold,
            "no_candidates": self.no_candidates,
            "candidates": [{"system": c.system_id, "queue": c.queue, "predicted_q": c.predicted_q,
                            "predicted_bin": c.predicted_bin} for c in self.candidates],
        }


def _snapshot_for(snapshots, system_id, queue):
    for key in ((system_id, queue), f"{system_id}/{queue}"):
        if key in snapshots:
            return snapshots[key]
    return None


SNAPSHOT_FIELDS = ("backlog_num_jobs", "backlog_minutes", "running_num_jobs", "running_minutes")


def request_features(num_nodes, max_minutes, snapshot) -> np.ndarray:
    return np.array([[num_nodes, max_minutes] + [float(snapshot[k]) for k in SNAPSHOT_FIELDS]])


def score_candidates(request: dict, systems, snapshots: dict):
    """Score every queue that satisfies the constraint and admits the request.

    ``request`` holds ``num_nodes``, ``max_minutes`` and an optional
    ``constraint`` (text or parsed). Returns ``(scored, skipped)`` where
    ``skipped`` lists human-readable reasons for feasible queues that could
    not be scored (no snapshot) and systems whose constraint evaluation
    failed.
    """
    constraint = request.get("constraint")
    if isinstance(constraint, str):
        constraint = parse_constraint(constraint) if constraint.strip() else None
    nodes, minutes = int(request["num_nodes"]), int(request["max_minutes"])
    scored, skipped = [], []
    for system in systems:
        try:
            if not eval_constraint(constraint, system.attributes):
                continue
        except ConstraintEvalError as exc:
            skipped.append(f"{system.system_id}: constraint not evaluable ({exc}); treated as infeasible")
            continue
        for q in system.queues:
            if nodes > q.max_nodes or minutes > q.max_minutes:
                continue
            snap = _snapshot_for(snapshots, system.system_id, q.name)
            if snap is None:
                skipped.append(f"{system.system_id}/{q.name}: no queue snapshot; skipped")
                continue
            x = request_features(nodes, minutes, snap)
            pred = float(clamp_minutes(q.model.predict(x))[0])
            if q.classifier is not None:
                b = int(q.classifier.predict(x)[0])
            elif q.bin_spec is not None:
                b = int(assign_bins([pred], q.bin_spec)[0])
            else:
                b = None
            scored.append(ScoredCandidate(system.system_id, q.name, pred, b))
    return scored, skipped


def recommend(scored: list[ScoredCandidate], params: ToleranceParams,
              n_bins: int = DEFAULT_N_BINS) -> Recommendation:
    """Apply the tolerance rule: provision iff the best predicted wait exceeds ``p*t``.

    Candidates without a predicted bin get one from bins of width ``p*t``.
    """
    threshold = params.threshold
    spec = BinSpec(threshold, n_bins)
    filled = [c if c.predicted_bin is not None else
              ScoredCandidate(c.system_id, c.queue, c.predicted_q,
                              int(assign_bins([c.predicted_q], spec)[0]))
              for c in scored]
    if not filled:
        return Recommendation(PROVISION, None, None, threshold, [], no_candidates=True)
    best = min(filled, key=lambda c: (c.predicted_q, c.system_id, c.queue))
    if best.predicted_q > threshold:
        return Recommendation(PROVISION, None, best.predicted_q, threshold, filled)
    return Recommendation(RUN_ON, best.key, best.predicted_q, threshold, filled)


def bin_candidacy(predicted_bin: int, n_bins: int) -> Candidacy:
    """Bin 1 never warrants provisioning; higher bins do, the top bin most strongly."""
    if n_bins < 2:
        raise ValueError("need at least 2 bins")
    if not 1 <= predicted_bin <= n_bins:
        raise ValueError(f"bin {predicted_bin} outside 1..{n_bins}")
    if predicted_bin == 1:
        return Candidacy(False)
    return Candidacy(True, (predicted_bin - 1) / (n_bins - 1))


# -- files ----------------------------------------------------------------------------

def load_registry(path) -> list[SystemDescriptor]:
    """Read a JSON list of system descriptors; model paths are relative to the file."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    systems = []
    for s in doc:
        queues = []
        for q in s.get("queues", []):
            model = load_model(os.path.join(base, q["model"]))
            clf = load_model(os.path.join(base, q["classifier"])) if q.get("classifier") else None
            bins = BinSpec.from_dict(q["bins"]) if q.get("bins") else None
            queues.append(QueueDescriptor(q["name"], int(q["max_nodes"]), int(q["max_minutes"]),
                                          model, clf, bins))
        systems.append(SystemDescriptor(s["system_id"], dict(s.get("attributes", {})),
                                        tuple(queues)))
    return systems


def load_snapshots(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    for key, snap in doc.items():
        if "/" not in key:
            raise ValueError(f"snapshot key {key!r} is not 'system/queue'")
        missing = set(SNAPSHOT_FIELDS) - set(snap)
        if missing:
            raise ValueError(f"snapshot {key}: missing {sorted(missing)}")
    return doc
