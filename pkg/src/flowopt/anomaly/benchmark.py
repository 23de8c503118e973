"""Synthetic anomaly benchmark: normal traces from a simulated process,
anomalies made by one adjacent swap or one insertion per trace."""
from __future__ import annotations

import random
from dataclasses import dataclass
from importlib import resources

from ..model.io import parse_process
from ..model.types import AND_JOIN, AND_SPLIT, END, TASK, ProcessDefinition
from ..sim.engine import ScenarioConfig, Simulator
from ..sim.policies import FifoPolicy
from .detector import DetectorConfig, calibrate_threshold, evaluate_detector, train_detector


def bundled_model(name: str) -> ProcessDefinition:
    text = resources.files("flowopt.data.models").joinpath(f"{name}.json").read_text()
    return parse_process(text)


def _closure(defn: ProcessDefinition, node_ids) -> set:
    """Nodes reachable through non-task nodes, stopping at tasks and ends."""
    out, todo, seen = set(), list(node_ids), set()
    while todo:
        nid = todo.pop()
        if nid in seen:
            continue
        seen.add(nid)
        node = defn.node(nid)
        if node.kind in (TASK, END):
            out.add(nid)
        else:
            todo.extend(f.target for f in defn.outgoing(nid))
    return out


def accepts(defn: ProcessDefinition, trace) -> bool:
    """Whether ``trace`` (task ids) is a complete run of an AND-free model."""
    if any(n.kind in (AND_SPLIT, AND_JOIN) for n in defn.nodes):
        raise ValueError("language check supports sequence/XOR models only")
    frontier = _closure(defn, [f.target for f in defn.outgoing(defn.start.id)])
    for act in trace:
        hits = [n for n in frontier if n == act and defn.node(n).kind == TASK]
        if not hits:
            return False
        frontier = _closure(defn, [f.target for h in hits for f in defn.outgoing(h)])
    return any(defn.node(n).kind == END for n in frontier)


def simulate_traces(defn: ProcessDefinition, n: int, seed: int) -> list[list[str]]:
    """n contention-free cases; returns their task sequences."""
    scenario = ScenarioConfig(horizon=float(n) * 1000.0, arrivals=tuple(float(i) * 1000.0 for i in range(n)),
                              seed=seed, max_in_flight=n)
    log = Simulator(defn, scenario, FifoPolicy()).run()
    tasks = {t.id for t in defn.tasks}
    cases = {}
    for ev in log.events:
        if ev.activity in tasks:
            cases.setdefault(ev.case_id, []).append(ev)
    return [[e.activity for e in sorted(evs, key=lambda e: e.start_time)]
            for _, evs in sorted(cases.items())]


def perturb(defn: ProcessDefinition, trace, rng: random.Random, max_tries: int = 100) -> list[str]:
    """One adjacent swap or one random insertion, resampled until the result
    is outside the model's language."""
    alphabet = sorted(t.id for t in defn.tasks)
    for _ in range(max_tries):
        out = list(trace)
        if rng.random() < 0.5 and len(out) >= 2:
            i = rng.randrange(len(out) - 1)
            out[i], out[i + 1] = out[i + 1], out[i]
        else:
            out.insert(rng.randrange(len(out) + 1), rng.choice(alphabet))
        if not accepts(defn, out):
            return out
    raise RuntimeError("could not produce an anomalous trace")


@dataclass
class BenchmarkData:
    train: list
    validation: list
    test: list
    labels: list


def make_benchmark(seed: int, defn: ProcessDefinition = None, n_train: int = 600,
                   n_validation: int = 1000, n_test: int = 1000, anomaly_rate: float = 0.10) -> BenchmarkData:
    defn = defn or bundled_model("claims")
    normal = simulate_traces(defn, n_train + n_validation + n_test, seed)
    train = normal[:n_train]
    validation = normal[n_train:n_train + n_validation]
    test = normal[n_train + n_validation:]
    rng = random.Random(f"{seed}:anomalies")
    n_anom = int(round(anomaly_rate * n_test))
    picks = set(rng.sample(range(n_test), n_anom))
    labels = []
    for i in range(n_test):
        if i in picks:
            test[i] = perturb(defn, test[i], rng)
        labels.append(i in picks)
    return BenchmarkData(train, validation, test, labels)


def run_benchmark(seed: int, config: DetectorConfig = None, target_fpr: float = 0.005, **kw) -> dict:
    data = make_benchmark(seed, **kw)
    cfg = config or DetectorConfig(seed=seed)
    model = train_detector(data.train, cfg)
    calibrate_threshold(model, data.validation, target_fpr)
    metrics = evaluate_detector(model, data.test, data.labels)
    metrics["seed"] = seed
    metrics["final_train_loss"] = model.history[-1]
    return metrics
