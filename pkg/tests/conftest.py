import contextlib
import copy
import json
import socket
import subprocess
import sys
import time
import urllib.request

import pytest

MINIMAL_DOC = {
    "id": "minimal",
    "name": "Minimal",
    "nodes": [
        {"id": "start", "kind": "StartEvent"},
        {"id": "work", "kind": "Task", "duration": {"kind": "Deterministic", "value": 5.0},
         "role": "clerk", "cost_rate": 1.0},
        {"id": "end", "kind": "EndEvent"},
    ],
    "flows": [
        {"id": "f1", "source": "start", "target": "work"},
        {"id": "f2", "source": "work", "target": "end"},
    ],
    "pools": [{"role": "clerk", "capacity": 1, "cost_rate": 0.0}],
}

XOR_DOC = {
    "id": "xor",
    "name": "Branching",
    "nodes": [
        {"id": "start", "kind": "StartEvent"},
        {"id": "x", "kind": "XorGateway"},
        {"id": "a", "kind": "Task", "duration": {"kind": "Exponential", "rate": 1.0}, "role": "r"},
        {"id": "b", "kind": "Task", "duration": {"kind": "Uniform", "low": 1.0, "high": 2.0}, "role": "r"},
        {"id": "e1", "kind": "EndEvent"},
        {"id": "e2", "kind": "EndEvent"},
    ],
    "flows": [
        {"id": "f0", "source": "start", "target": "x"},
        {"id": "fa", "source": "x", "target": "a", "probability": 0.7},
        {"id": "fb", "source": "x", "target": "b", "probability": 0.3},
        {"id": "f1", "source": "a", "target": "e1"},
        {"id": "f2", "source": "b", "target": "e2"},
    ],
    "pools": [{"role": "r", "capacity": 2, "cost_rate": 0.5}],
}


@pytest.fixture
def minimal_doc():
    return copy.deepcopy(MINIMAL_DOC)


@pytest.fixture
def xor_doc():
    return copy.deepcopy(XOR_DOC)


def serial_doc(durations, capacities, rate_kind="Deterministic"):
    """start -> t0 -> t1 -> ... -> end, task i on its own role ``r{i}``."""
    nodes = [{"id": "start", "kind": "StartEvent"}]
    flows = []
    prev = "start"
    for i, d in enumerate(durations):
        dur = {"kind": "Deterministic", "value": d} if rate_kind == "Deterministic" else {"kind": "Exponential", "rate": 1.0 / d}
        nodes.append({"id": f"t{i}", "kind": "Task", "duration": dur, "role": f"r{i}"})
        flows.append({"id": f"f{i}", "source": prev, "target": f"t{i}"})
        prev = f"t{i}"
    nodes.append({"id": "end", "kind": "EndEvent"})
    flows.append({"id": "fend", "source": prev, "target": "end"})
    pools = [{"role": f"r{i}", "capacity": c, "cost_rate": 0.0} for i, c in enumerate(capacities)]
    return {"id": "serial", "name": "serial", "nodes": nodes, "flows": flows, "pools": pools}


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@contextlib.contextmanager
def running_server(data_dir, workers: int = 2, startup: float = 30.0):
    """Run ``flowopt serve`` in a child process and yield its base URL."""
    port = free_port()
    proc = subprocess.Popen([sys.executable, "-m", "flowopt", "serve", "--port", str(port),
                             "--data-dir", str(data_dir), "--workers", str(workers)],
                            stdout=subprocess.DEVNULL, stderr=subprocess.PIPE)
    url = f"http://127.0.0.1:{port}"
    try:
        deadline = time.monotonic() + startup
        while True:
            try:
                with urllib.request.urlopen(url + "/health", timeout=1.0) as resp:
                    if json.loads(resp.read()) == {"status": "ok"}:
                        break
            except OSError:
                if proc.poll() is not None or time.monotonic() > deadline:
                    raise RuntimeError(f"server did not start: {proc.stderr.read().decode()}")
                time.sleep(0.1)
        yield url
    finally:
        proc.terminate()
        try:
            proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            proc.kill()
