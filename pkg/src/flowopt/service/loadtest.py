"""Closed-loop HTTP load harness: latency percentiles, error rate, availability."""
from __future__ import annotations

import asyncio
import json
import random
import time
import urllib.request
from dataclasses import asdict, dataclass

import aiohttp

from ..sim.kpis import nearest_rank


class TargetUnreachable(ConnectionError):
    pass


@dataclass
class ReliabilityReport:
    requests: int
    errors: int
    error_rate: float
    availability: float
    p50_ms: float
    p95_ms: float
    p99_ms: float
    max_ms: float
    duration: float
    concurrency: int
    probes: int
    by_endpoint: dict

    def to_doc(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_doc(), indent=2, sort_keys=True) + "\n"


def summarize(latencies_ms, errors: int, probe_results, duration: float, concurrency: int,
              by_endpoint=None) -> ReliabilityReport:
    n = len(latencies_ms)
    pct = (lambda p: nearest_rank(latencies_ms, p)) if n else (lambda p: None)
    return ReliabilityReport(
        requests=n, errors=errors, error_rate=errors / n if n else 0.0,
        availability=sum(probe_results) / len(probe_results) if probe_results else 0.0,
        p50_ms=pct(0.50), p95_ms=pct(0.95), p99_ms=pct(0.99), max_ms=max(latencies_ms) if n else None,
        duration=duration, concurrency=concurrency, probes=len(probe_results),
        by_endpoint=dict(by_endpoint or {}))


def _normalize_mix(endpoints):
    mix = []
    for item in endpoints:
        path, weight = (item, 1.0) if isinstance(item, str) else item
        if weight <= 0:
            raise ValueError("endpoint weights must be positive")
        mix.append((path, float(weight)))
    if not mix:
        raise ValueError("no endpoints")
    return mix


async def _run(base_url, mix, concurrency, duration, seed, probe_interval, timeout):
    base_url = base_url.rstrip("/")
    tmo = aiohttp.ClientTimeout(total=timeout)
    connector = aiohttp.TCPConnector(limit=concurrency, force_close=False)
    latencies, errors = [], 0
    by_endpoint = {p: {"requests": 0, "errors": 0} for p, _ in mix}
    probes = []
    paths, weights = [p for p, _ in mix], [w for _, w in mix]
    async with aiohttp.ClientSession(connector=connector, timeout=tmo) as session, \
            aiohttp.ClientSession(timeout=aiohttp.ClientTimeout(total=probe_interval)) as probe_session:
        try:
            async with probe_session.get(base_url + "/health") as resp:
                await resp.read()
        except (aiohttp.ClientError, asyncio.TimeoutError, OSError) as exc:
            raise TargetUnreachable(f"{base_url}: {exc}") from None
        loop = asyncio.get_running_loop()
        start = loop.time()
        end = start + duration

        async def client(i):
            nonlocal errors
            rng = random.Random(f"{seed}:client:{i}")
            while loop.time() < end:
                path = rng.choices(paths, weights)[0]
                t0 = time.perf_counter()
                ok = False
                try:
                    async with session.get(base_url + path) as resp:
                        await resp.read()
                        ok = resp.status < 400
                except (aiohttp.ClientError, asyncio.TimeoutError, OSError):
                    ok = False
                latencies.append((time.perf_counter() - t0) * 1000.0)
                by_endpoint[path]["requests"] += 1
                if not ok:
                    errors += 1
                    by_endpoint[path]["errors"] += 1

        async def prober():
            k = 0
            while True:
                target = start + k * probe_interval
                if target >= end:
                    return
                await asyncio.sleep(max(0.0, target - loop.time()))
                try:
                    async with probe_session.get(base_url + "/health") as resp:
                        await resp.read()
                        probes.append(resp.status == 200)
                except (aiohttp.ClientError, asyncio.TimeoutError, OSError):
                    probes.append(False)
                k += 1

        await asyncio.gather(prober(), *(client(i) for i in range(concurrency)))
        elapsed = loop.time() - start
    return summarize(latencies, errors, probes, elapsed, concurrency, by_endpoint)


def load_test(base_url: str, endpoints=("/health",), concurrency: int = 10, duration: float = 10.0,
              seed: int = 0, probe_interval: float = 1.0, timeout: float = 10.0) -> ReliabilityReport:
    """``concurrency`` clients issue back-to-back GETs for ``duration`` seconds.

    ``endpoints`` holds paths or (path, weight) pairs; each client draws its
    sequence from a stream seeded by (seed, client index).
    """
    if concurrency < 1 or duration <= 0:
        raise ValueError("concurrency must be >= 1 and duration > 0")
    mix = _normalize_mix(endpoints)
    return asyncio.run(_run(base_url, mix, concurrency, duration, seed, probe_interval, timeout))


def _request(url: str, method: str = "GET", body=None, timeout: float = 10.0):
    data = None if body is None else json.dumps(body).encode()
    req = urllib.request.Request(url, data=data, method=method, headers={"content-type": "application/json"})
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return json.loads(resp.read())


def prepare_kpi_target(base_url: str, process_doc: dict, scenario: dict, timeout: float = 60.0) -> str:
    """Store a process, run one simulation job and return its KPI path."""
    base_url = base_url.rstrip("/")
    pid = _request(base_url + "/processes", "POST", process_doc)["id"]
    job = _request(base_url + "/simulations", "POST", {"process_id": pid, "scenario": scenario})
    deadline = time.monotonic() + timeout
    while job["status"] not in ("Done", "Failed"):
        if time.monotonic() > deadline:
            raise TimeoutError("simulation job did not finish")
        time.sleep(0.05)
        job = _request(f"{base_url}/jobs/{job['job_id']}")
    if job["status"] != "Done":
        raise RuntimeError(f"simulation job failed: {job.get('error')}")
    return f"/simulations/{job['job_id']}/kpis"
