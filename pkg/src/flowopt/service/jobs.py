"""Background job registry with one directory per job."""
from __future__ import annotations

import json
import threading
import time
import traceback
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional

KINDS = ("Simulate", "TrainDetector", "TrainScheduler")
QUEUED, RUNNING, DONE, FAILED = "Queued", "Running", "Done", "Failed"
_NEXT = {QUEUED: {RUNNING}, RUNNING: {DONE, FAILED}, DONE: set(), FAILED: set()}


class IllegalTransition(RuntimeError):
    pass


@dataclass
class JobRecord:
    job_id: str
    kind: str
    status: str
    result_ref: str
    submitted: float
    finished: Optional[float] = None
    error: Optional[str] = None

    def to_doc(self) -> dict:
        return asdict(self)


class JobStore:
    """Registry mutations go through one lock; each job writes only inside its own directory."""

    def __init__(self, root: Path, workers: int = 2):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._jobs: dict = {}
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="job")
        for path in sorted(self.root.glob("*/job.json")):
            rec = JobRecord(**json.loads(path.read_text()))
            if rec.status in (QUEUED, RUNNING):  # interrupted by a restart
                rec.status, rec.error, rec.finished = FAILED, "server restarted", time.time()
            self._jobs[rec.job_id] = rec

    def directory(self, job_id: str) -> Path:
        return self.root / job_id

    def get(self, job_id: str) -> Optional[JobRecord]:
        with self._lock:
            rec = self._jobs.get(job_id)
            return None if rec is None else JobRecord(**asdict(rec))

    def _set(self, job_id: str, status: str, error: Optional[str] = None) -> None:
        with self._lock:
            rec = self._jobs[job_id]
            if status not in _NEXT[rec.status]:
                raise IllegalTransition(f"{rec.status} -> {status}")
            rec.status = status
            if status in (DONE, FAILED):
                rec.finished = time.time()
                rec.error = error
            self._persist(rec)

    def _persist(self, rec: JobRecord) -> None:
        path = self.directory(rec.job_id) / "job.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(rec.to_doc(), indent=2))
        tmp.replace(path)

    def submit(self, kind: str, work: Callable[[Path], None]) -> JobRecord:
        """Queue ``work(job_dir)``; it must write its artifacts into ``job_dir``."""
        if kind not in KINDS:
            raise ValueError(f"unknown job kind {kind!r}")
        job_id = uuid.uuid4().hex
        job_dir = self.directory(job_id)
        job_dir.mkdir(parents=True)
        rec = JobRecord(job_id, kind, QUEUED, str(job_dir), time.time())
        with self._lock:
            self._jobs[job_id] = rec
            self._persist(rec)
        self._pool.submit(self._run, job_id, work)
        return JobRecord(**asdict(rec))

    def _run(self, job_id: str, work) -> None:
        self._set(job_id, RUNNING)
        try:
            work(self.directory(job_id))
        except Exception as exc:  # a failed job only ever touches its own directory
            (self.directory(job_id) / "error.txt").write_text(traceback.format_exc())
            self._set(job_id, FAILED, f"{type(exc).__name__}: {exc}")
        else:
            self._set(job_id, DONE)

    def wait(self, job_id: str, timeout: float = 60.0) -> JobRecord:
        deadline = time.monotonic() + timeout
        while True:
            rec = self.get(job_id)
            if rec is None or rec.status in (DONE, FAILED) or time.monotonic() > deadline:
                return rec
            time.sleep(0.01)

    def shutdown(self) -> None:
        self._pool.shutdown(wait=False, cancel_futures=True)
