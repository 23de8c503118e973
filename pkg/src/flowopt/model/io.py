"""Native JSON process documents and a BPMN-XML subset importer."""
from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Union

from .types import (AND_JOIN, AND_SPLIT, DURATION_PARAMS, END, NODE_KINDS, START, TASK, XOR,
                    DurationDistribution, Node, ProcessDefinition, ResourcePool, SequenceFlow)
from .validate import ProcessSyntaxError, raise_for_violations, validate

TOP_KEYS = {"id", "name", "nodes", "flows", "pools"}
NODE_KEYS = {"id", "kind", "duration", "role", "cost_rate"}
FLOW_KEYS = {"id", "source", "target", "probability"}
POOL_KEYS = {"role", "capacity", "cost_rate"}


def _check_keys(obj, allowed, required, where):
    if not isinstance(obj, dict):
        raise ProcessSyntaxError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ProcessSyntaxError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ProcessSyntaxError(f"{where}: missing keys {sorted(missing)}")


def _string(v, where):
    if not isinstance(v, str):
        raise ProcessSyntaxError(f"{where}: expected a string")
    return v


def _number(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ProcessSyntaxError(f"{where}: expected a number")
    return v


def _duration(doc, where) -> DurationDistribution:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ProcessSyntaxError(f"{where}: duration needs a kind")
    kind = doc["kind"]
    if kind not in DURATION_PARAMS:
        raise ProcessSyntaxError(f"{where}: unknown duration kind {kind!r}")
    names = DURATION_PARAMS[kind]
    _check_keys(doc, {"kind", *names}, {"kind", *names}, where)
    return DurationDistribution(kind, tuple(_number(doc[n], f"{where}.{n}") for n in names))


def process_from_doc(doc: dict, check: bool = True) -> ProcessDefinition:
    _check_keys(doc, TOP_KEYS, TOP_KEYS, "process")
    for key in ("nodes", "flows", "pools"):
        if not isinstance(doc[key], list):
            raise ProcessSyntaxError(f"process.{key}: expected a list")
    nodes = []
    for i, nd in enumerate(doc["nodes"]):
        where = f"nodes[{i}]"
        _check_keys(nd, NODE_KEYS, {"id", "kind"}, where)
        kind = _string(nd["kind"], where + ".kind")
        if kind not in NODE_KINDS:
            raise ProcessSyntaxError(f"{where}: unknown node kind {kind!r}")
        nodes.append(Node(
            id=_string(nd["id"], where + ".id"),
            kind=kind,
            duration=_duration(nd["duration"], where + ".duration") if "duration" in nd else None,
            role=_string(nd["role"], where + ".role") if "role" in nd else None,
            cost_rate=_number(nd["cost_rate"], where + ".cost_rate") if "cost_rate" in nd else None,
        ))
    flows = []
    for i, fd in enumerate(doc["flows"]):
        where = f"flows[{i}]"
        _check_keys(fd, FLOW_KEYS, {"id", "source", "target"}, where)
        flows.append(SequenceFlow(
            id=_string(fd["id"], where + ".id"),
            source=_string(fd["source"], where + ".source"),
            target=_string(fd["target"], where + ".target"),
            probability=_number(fd["probability"], where + ".probability") if "probability" in fd else None,
        ))
    pools = []
    for i, pd in enumerate(doc["pools"]):
        where = f"pools[{i}]"
        _check_keys(pd, POOL_KEYS, POOL_KEYS, where)
        cap = pd["capacity"]
        if isinstance(cap, bool) or not isinstance(cap, int):
            raise ProcessSyntaxError(f"{where}.capacity: expected an integer")
        pools.append(ResourcePool(_string(pd["role"], where + ".role"), cap,
                                  _number(pd["cost_rate"], where + ".cost_rate")))
    defn = ProcessDefinition(_string(doc["id"], "process.id"), _string(doc["name"], "process.name"),
                             nodes, flows, pools)
    if check:
        raise_for_violations(validate(defn))
    return defn


def parse_process(text: Union[str, bytes], check: bool = True) -> ProcessDefinition:
    """Parse a native JSON process document and validate it."""
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ProcessSyntaxError(f"malformed JSON: {exc}") from exc
    return process_from_doc(doc, check=check)


def process_to_doc(defn: ProcessDefinition) -> dict:
    nodes = []
    for n in defn.nodes:
        nd = {"id": n.id, "kind": n.kind}
        if n.duration is not None:
            nd["duration"] = n.duration.to_doc()
        if n.role is not None:
            nd["role"] = n.role
        if n.cost_rate is not None:
            nd["cost_rate"] = n.cost_rate
        nodes.append(nd)
    flows = []
    for f in defn.flows:
        fd = {"id": f.id, "source": f.source, "target": f.target}
        if f.probability is not None:
            fd["probability"] = f.probability
        flows.append(fd)
    pools = [{"role": p.role, "capacity": p.capacity, "cost_rate": p.cost_rate} for p in defn.pools]
    return {"id": defn.id, "name": defn.name, "nodes": nodes, "flows": flows, "pools": pools}


def serialize_process(defn: ProcessDefinition) -> str:
    return json.dumps(process_to_doc(defn), indent=2) + "\n"


def load_process(path: Union[str, Path]) -> ProcessDefinition:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".bpmn", ".xml"):
        return import_bpmn_xml(text)
    return parse_process(text)


# --- BPMN-XML subset -------------------------------------------------------

BPMN_NS = "http://www.omg.org/spec/BPMN/20100524/MODEL"
EXT_NS = "urn:flowopt:bpmn-ext"


def _parse_duration_attr(text: str, where: str) -> DurationDistribution:
    # "Exponential:rate=1.5" or "Uniform:low=1,high=3"
    try:
        kind, _, rest = text.partition(":")
        params = dict(item.split("=", 1) for item in rest.split(",") if item)
        return _duration({"kind": kind.strip(), **{k.strip(): float(v) for k, v in params.items()}}, where)
    except ValueError as exc:
        raise ProcessSyntaxError(f"{where}: bad duration attribute {text!r}") from exc


def import_bpmn_xml(text: str, check: bool = True) -> ProcessDefinition:
    """Import the supported BPMN 2.0 element subset.

    Durations, roles, costs and branch probabilities travel as attributes in
    the ``urn:flowopt:bpmn-ext`` namespace; pools are ``ext:pool`` elements
    anywhere under the definitions root.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise ProcessSyntaxError(f"malformed XML: {exc}") from exc
    process = root if root.tag == f"{{{BPMN_NS}}}process" else root.find(f"{{{BPMN_NS}}}process")
    if process is None:
        raise ProcessSyntaxError("no bpmn:process element")
    ext = lambda el, name: el.get(f"{{{EXT_NS}}}{name}")

    flows = []
    for el in process.iter(f"{{{BPMN_NS}}}sequenceFlow"):
        prob = ext(el, "probability")
        flows.append(SequenceFlow(el.get("id"), el.get("sourceRef"), el.get("targetRef"),
                                  float(prob) if prob is not None else None))
    n_in, n_out = {}, {}
    for f in flows:
        n_out[f.source] = n_out.get(f.source, 0) + 1
        n_in[f.target] = n_in.get(f.target, 0) + 1

    simple = {"startEvent": START, "endEvent": END, "exclusiveGateway": XOR}
    nodes = []
    for el in process:
        tag = el.tag.rsplit("}", 1)[-1]
        node_id = el.get("id")
        if tag in simple:
            nodes.append(Node(node_id, simple[tag]))
        elif tag == "parallelGateway":
            kind = AND_JOIN if n_in.get(node_id, 0) > 1 and n_out.get(node_id, 0) <= 1 else AND_SPLIT
            nodes.append(Node(node_id, kind))
        elif tag == "task":
            dur = ext(el, "duration")
            cost = ext(el, "costRate")
            nodes.append(Node(node_id, TASK,
                              _parse_duration_attr(dur, node_id) if dur else None,
                              ext(el, "role"), float(cost) if cost is not None else None))
        elif tag not in ("sequenceFlow", "extensionElements", "documentation"):
            raise ProcessSyntaxError(f"unsupported BPMN element {tag!r}")

    pools = []
    for el in root.iter(f"{{{EXT_NS}}}pool"):
        try:
            pools.append(ResourcePool(el.get("role"), int(el.get("capacity")),
                                      float(el.get("costRate", "0"))))
        except (TypeError, ValueError) as exc:
            raise ProcessSyntaxError(f"bad pool element: {exc}") from exc
    defn = ProcessDefinition(process.get("id", ""), process.get("name", ""), nodes, flows, pools)
    if check:
        raise_for_violations(validate(defn))
    return defn
