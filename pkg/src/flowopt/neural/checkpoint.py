"""Versioned JSON checkpoints of named parameter arrays."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def params_to_doc(params: dict) -> dict:
    # float repr round-trips exactly, so reloads are bit-identical
    return {name: {"shape": list(a.shape), "data": [float(x) for x in np.ravel(a)]}
            for name, a in params.items()}


def params_from_doc(doc: dict) -> dict:
    out = {}
    for name, entry in doc.items():
        arr = np.asarray(entry["data"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if arr.size != int(np.prod(shape)):
            raise CheckpointError(f"{name}: {arr.size} values for shape {shape}")
        out[name] = arr.reshape(shape)
    return out


def make_checkpoint(kind: str, architecture: dict, params: dict, **extra) -> dict:
    doc = {"format_version": FORMAT_VERSION, "kind": kind, "architecture": architecture,
           "params": params_to_doc(params)}
    doc.update(extra)
    return doc


def read_checkpoint(source, kind: str) -> dict:
    if isinstance(source, dict):
        doc = source
    else:
        doc = json.loads(Path(source).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    if doc.get("kind") != kind:
        raise CheckpointError(f"expected a {kind} checkpoint, got {doc.get('kind')!r}")
    return doc


def write_json(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc) + "\n")
