"""Event records, the event log container and its CSV form."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

CSV_HEADER = ["case_id", "activity", "resource", "enqueue_time", "start_time", "complete_time"]
INGEST_COLUMN = "ingest_time"


@dataclass(slots=True)
class Event:
    """One executed node of one case.

    Fields are optional so that defective logs read from CSV (blank cells)
    can still be represented and assessed.
    """

    case_id: Optional[int]
    activity: Optional[str]
    resource: Optional[str]
    enqueue_time: Optional[float]
    start_time: Optional[float]
    complete_time: Optional[float]
    attributes: dict = field(default_factory=dict)
    ingest_time: Optional[float] = None

    @property
    def role(self) -> Optional[str]:
        return self.resource.rsplit("#", 1)[0] if self.resource else None

    @property
    def duration(self) -> Optional[float]:
        if self.start_time is None or self.complete_time is None:
            return None
        return self.complete_time - self.start_time

    @property
    def wait(self) -> Optional[float]:
        if self.start_time is None or self.enqueue_time is None:
            return None
        return self.start_time - self.enqueue_time


def resource_name(role: str, unit: int) -> str:
    return f"{role}#{unit}"


def sort_key(ev: Event):
    return (ev.complete_time, ev.case_id, ev.activity)


@dataclass
class EventLog:
    events: list
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def cases(self) -> dict:
        """case_id -> events of that case, in log order."""
        out: dict = {}
        for ev in self.events:
            out.setdefault(ev.case_id, []).append(ev)
        return out

    def traces(self, activities: Optional[set] = None) -> dict:
        """case_id -> activity sequence, optionally restricted to ``activities``."""
        return {cid: [e.activity for e in evs if activities is None or e.activity in activities]
                for cid, evs in self.cases().items()}

    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        text = log_to_csv(self)
        if path is not None:
            Path(path).write_text(text)
        return text


def _fmt_time(t: Optional[float]) -> str:
    return "" if t is None else f"{t:.6f}"


def log_to_csv(log: EventLog) -> str:
    with_ingest = any(ev.ingest_time is not None for ev in log.events)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER + ([INGEST_COLUMN] if with_ingest else []))
    for ev in log.events:
        row = ["" if ev.case_id is None else str(ev.case_id), ev.activity or "", ev.resource or "",
               _fmt_time(ev.enqueue_time), _fmt_time(ev.start_time), _fmt_time(ev.complete_time)]
        if with_ingest:
            row.append(_fmt_time(ev.ingest_time))
        w.writerow(row)
    return buf.getvalue()


class LogFormatError(ValueError):
    pass


def _opt_float(cell: str, where: str) -> Optional[float]:
    if cell == "":
        return None
    try:
        return float(cell)
    except ValueError:
        raise LogFormatError(f"{where}: not a number: {cell!r}") from None


def log_from_csv(text: str, meta: Optional[dict] = None) -> EventLog:
    rows = csv.reader(io.StringIO(text))
    try:
        header = next(rows)
    except StopIteration:
        raise LogFormatError("empty CSV") from None
    if header[:6] != CSV_HEADER or header[6:] not in ([], [INGEST_COLUMN]):
        raise LogFormatError(f"unexpected header {header}")
    with_ingest = len(header) == 7
    events = []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise LogFormatError(f"line {lineno}: expected {len(header)} cells")
        where = f"line {lineno}"
        try:
            case_id = int(row[0]) if row[0] != "" else None
        except ValueError:
            raise LogFormatError(f"{where}: bad case_id {row[0]!r}") from None
        events.append(Event(case_id, row[1] or None, row[2] or None,
                            _opt_float(row[3], where), _opt_float(row[4], where),
                            _opt_float(row[5], where),
                            ingest_time=_opt_float(row[6], where) if with_ingest else None))
    return EventLog(events, dict(meta or {}))


def read_log(path: Union[str, Path]) -> EventLog:
    path = Path(path)
    meta_path = path.with_name(path.name + ".meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return log_from_csv(path.read_text(), meta)


def write_log(log: EventLog, path: Union[str, Path], with_meta: bool = True) -> None:
    path = Path(path)
    path.write_text(log_to_csv(log))
    if with_meta and log.meta:
        path.with_name(path.name + ".meta.json").write_text(json.dumps(log.meta, indent=2, sort_keys=True) + "\n")


def from_traces(traces: Iterable[Iterable[str]]) -> EventLog:
    """Build a timing-free log from activity sequences (one case per trace)."""
    events = []
    for cid, trace in enumerate(traces):
        for i, act in enumerate(trace):
            events.append(Event(cid, act, None, float(i), float(i), float(i)))
    events.sort(key=sort_key)
    return EventLog(events)
