"""Local structural validation of process definitions.

Violations are returned as data. ``raise_for_violations`` turns the first one
into the matching exception class for callers that want to fail fast.
"""
from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass

from .types import END, START, TASK, XOR, ProcessDefinition

PROBABILITY_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Violation:
    code: str
    element: str
    detail: str = ""

    def to_doc(self) -> dict:
        return {"code": self.code, "element": self.element, "detail": self.detail}

    def __str__(self):
        return f"{self.code}({self.element})" + (f": {self.detail}" if self.detail else "")


class ProcessError(ValueError):
    """Base class for process-definition errors."""


class ProcessSyntaxError(ProcessError):
    pass


class ProcessValidationError(ProcessError):
    code = "Invalid"

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


def _error_class(code):
    return type(code, (ProcessValidationError,), {"code": code})


MissingStart = _error_class("MissingStart")
MultipleStart = _error_class("MultipleStart")
MissingEnd = _error_class("MissingEnd")
DuplicateId = _error_class("DuplicateId")
DanglingFlow = _error_class("DanglingFlow")
TaskFields = _error_class("TaskFields")
BadDuration = _error_class("BadDuration")
UnknownRole = _error_class("UnknownRole")
BadPool = _error_class("BadPool")
BadDegree = _error_class("BadDegree")
ProbabilityPlacement = _error_class("ProbabilityPlacement")
ProbabilitySum = _error_class("ProbabilitySum")
Unreachable = _error_class("Unreachable")

ERRORS = {cls.code: cls for cls in (
    MissingStart, MultipleStart, MissingEnd, DuplicateId, DanglingFlow, TaskFields,
    BadDuration, UnknownRole, BadPool, BadDegree, ProbabilityPlacement, ProbabilitySum,
    Unreachable)}


def reachable_from(start: str, edges: dict[str, list[str]]) -> set[str]:
    seen = {start}
    todo = deque([start])
    while todo:
        for nxt in edges.get(todo.popleft(), ()):
            if nxt not in seen:
                seen.add(nxt)
                todo.append(nxt)
    return seen


def validate(defn: ProcessDefinition) -> list[Violation]:
    out: list[Violation] = []
    starts = [n for n in defn.nodes if n.kind == START]
    if not starts:
        out.append(Violation("MissingStart", defn.id, "no StartEvent"))
    elif len(starts) > 1:
        out.append(Violation("MultipleStart", ",".join(n.id for n in starts)))
    if not any(n.kind == END for n in defn.nodes):
        out.append(Violation("MissingEnd", defn.id, "no EndEvent"))

    for what, ids in (("node", [n.id for n in defn.nodes]), ("flow", [f.id for f in defn.flows]),
                      ("pool", [p.role for p in defn.pools])):
        for dup, count in Counter(ids).items():
            if count > 1:
                out.append(Violation("DuplicateId", dup, f"{what} id used {count} times"))

    node_ids = {n.id for n in defn.nodes}
    for f in defn.flows:
        for end in (f.source, f.target):
            if end not in node_ids:
                out.append(Violation("DanglingFlow", f.id, f"unknown node {end!r}"))

    pools = {p.role for p in defn.pools}
    for p in defn.pools:
        if not isinstance(p.capacity, int) or isinstance(p.capacity, bool) or p.capacity < 1:
            out.append(Violation("BadPool", p.role, "capacity must be an integer >= 1"))
        if not (isinstance(p.cost_rate, (int, float)) and math.isfinite(p.cost_rate)
                and p.cost_rate >= 0):
            out.append(Violation("BadPool", p.role, "cost_rate must be >= 0"))

    for n in defn.nodes:
        has_fields = (n.duration, n.role, n.cost_rate) != (None, None, None)
        if n.kind == TASK:
            if n.duration is None or n.role is None:
                out.append(Violation("TaskFields", n.id, "Task needs duration and role"))
            if n.duration is not None:
                for problem in n.duration.problems():
                    out.append(Violation("BadDuration", n.id, problem))
            if n.role is not None and n.role not in pools:
                out.append(Violation("UnknownRole", n.role, f"used by task {n.id}"))
            if n.cost_rate is not None and not (math.isfinite(n.cost_rate) and n.cost_rate >= 0):
                out.append(Violation("TaskFields", n.id, "cost_rate must be >= 0"))
        elif has_fields:
            out.append(Violation("TaskFields", n.id, f"{n.kind} cannot carry task fields"))

    for n in defn.nodes:
        n_out = len(defn.outgoing(n.id))
        if n.kind == END and n_out:
            out.append(Violation("BadDegree", n.id, "EndEvent has outgoing flows"))
        elif n.kind != END and not n_out:
            out.append(Violation("BadDegree", n.id, "no outgoing flow"))

    kinds = {n.id: n.kind for n in defn.nodes}
    for f in defn.flows:
        from_xor = kinds.get(f.source) == XOR
        if from_xor and f.probability is None:
            out.append(Violation("ProbabilityPlacement", f.id, "XOR branch needs a probability"))
        elif not from_xor and f.probability is not None:
            out.append(Violation("ProbabilityPlacement", f.id, "probability only allowed on XOR branches"))
        elif f.probability is not None and not (0.0 <= f.probability <= 1.0):
            out.append(Violation("ProbabilityPlacement", f.id, "probability outside [0, 1]"))
    for n in defn.nodes:
        if n.kind != XOR:
            continue
        probs = [f.probability for f in defn.outgoing(n.id) if f.probability is not None]
        if probs and abs(math.fsum(probs) - 1.0) > PROBABILITY_TOLERANCE:
            out.append(Violation("ProbabilitySum", n.id, f"branch probabilities sum to {math.fsum(probs)!r}"))

    if len(starts) == 1:
        edges: dict[str, list[str]] = {}
        for f in defn.flows:
            edges.setdefault(f.source, []).append(f.target)
        seen = reachable_from(starts[0].id, edges)
        for n in defn.nodes:
            if n.id not in seen:
                out.append(Violation("Unreachable", n.id))
    return out


def raise_for_violations(violations: list[Violation]) -> None:
    if violations:
        raise ERRORS.get(violations[0].code, ProcessValidationError)(violations)
