"""Execution trace records and their JSON-lines serialization.

One line per event::

    {"ts": 1234, "rank": 0, "worker": 2, "task": 17, "label": "compute:b0.1:3", "kind": "start"}

``ts`` is a monotonic nanosecond clock shared by all ranks (they live in
one process).  ``worker`` is ``-1`` for events emitted on behalf of a rank
by a foreign thread, e.g. a request completion fired by the peer that
matched the message.
"""

from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from time import perf_counter_ns
from typing import Iterable

KINDS = (
    "spawn",
    "ready",
    "start",
    "body-done",
    "complete",
    "request-bound",
    "request-done",
    "steal",
    "wait-begin",
    "wait-end",
)


@dataclass(frozen=True, slots=True)
class TraceEvent:
    ts: int
    rank: int
    worker: int
    task: int
    label: str
    kind: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> TraceEvent:
        d = json.loads(line)
        return cls(int(d["ts"]), int(d["rank"]), int(d["worker"]), int(d["task"]), str(d["label"]), str(d["kind"]))


class _SharedBuffer(list):
    """Event buffer written by several threads; appends are serialized."""

    def __init__(self):
        super().__init__()
        self.lock = threading.Lock()

    def append(self, item):
        with self.lock:
            super().append(item)


class Tracer:
    """Collects events into per-(rank, worker) buffers.

    Workers append plain tuples to their private buffer, so recording on the
    hot path is a single ``list.append``.  Buffers are merged on export.
    """

    def __init__(self):
        self._buffers: dict[tuple[int, int], list] = {}
        self._lock = threading.Lock()

    def buffer(self, rank: int, worker: int) -> list:
        key = (rank, worker)
        with self._lock:
            buf = self._buffers.get(key)
            if buf is None:
                buf = _SharedBuffer() if worker < 0 else []
                self._buffers[key] = buf
            return buf

    def events(self) -> list[TraceEvent]:
        out = []
        with self._lock:
            items = list(self._buffers.items())
        for (rank, worker), buf in items:
            for ts, task, label, kind in list(buf):
                out.append(TraceEvent(ts, rank, worker, task, label, kind))
        out.sort(key=lambda e: (e.ts, e.rank, e.worker))
        return out

    def write(self, path: str | Path) -> int:
        events = self.events()
        write_events(path, events)
        return len(events)


def now() -> int:
    return perf_counter_ns()


def write_events(path: str | Path, events: Iterable[TraceEvent]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(ev.to_json())
            fh.write("\n")


def read_events(path: str | Path) -> list[TraceEvent]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(TraceEvent.from_json(line))
    return events


def per_worker_sequences(events: Iterable[TraceEvent]) -> dict[tuple[int, int], list[tuple[str, str]]]:
    """Timestamp-free (label, kind) sequence for every (rank, worker)."""
    seqs: dict[tuple[int, int], list[tuple[str, str]]] = {}
    for ev in events:
        seqs.setdefault((ev.rank, ev.worker), []).append((ev.label, ev.kind))
    return seqs
