"""Metrics derived from a trace: busy/idle time per worker and overlap witnesses.

Every function here is a pure function of the event list, so re-running a
report over the same trace file always gives the same numbers.

Task labels follow ``category:name:step`` (``compute:b1.2:7``,
``comm:recv_top:7``); labels without that shape belong to no step.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .trace import TraceEvent

SCHEMA = 1


def parse_label(label: str) -> tuple[str, str, int | None]:
    parts = label.split(":")
    if len(parts) == 3:
        try:
            return parts[0], parts[1], int(parts[2])
        except ValueError:
            pass
    return "", label, None


def _union_length(intervals: list[tuple[int, int]]) -> int:
    total = 0
    end = None
    for a, b in sorted(intervals):
        if end is None or a > end:
            total += b - a
            end = b
        elif b > end:
            total += b - end
            end = b
    return total


def _subtract(intervals, holes):
    """Length of the union of ``intervals`` minus the union of ``holes``."""
    merged = []
    for a, b in sorted(intervals):
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    total = _union_length([(a, b) for a, b in merged])
    for a, b in merged:
        clipped = [(max(a, x), min(b, y)) for x, y in holes if x < b and a < y]
        total -= _union_length(clipped)
    return total


@dataclass
class WorkerTime:
    rank: int
    worker: int
    busy_s: float
    idle_s: float

    @property
    def idle_fraction(self) -> float:
        total = self.busy_s + self.idle_s
        return self.idle_s / total if total > 0 else 0.0


def trace_span(events: Sequence[TraceEvent]) -> tuple[int, int]:
    if not events:
        return 0, 0
    return min(e.ts for e in events), max(e.ts for e in events)


def worker_times(events: Sequence[TraceEvent], workers: tuple[int, int] | None = None) -> list[WorkerTime]:
    """Busy and idle seconds for every worker over the whole trace span.

    Busy time is the union of ``[start, body-done]`` intervals of the tasks a
    worker executed, minus the intervals it spent blocked (``wait-begin`` to
    ``wait-end``).  Idle is the rest of the wall span.  ``workers`` as
    ``(ranks, workers_per_rank)`` adds workers that recorded nothing.
    """
    t0, t1 = trace_span(events)
    wall = t1 - t0
    starts: dict[tuple, int] = {}
    busy: dict[tuple[int, int], list] = defaultdict(list)
    waits: dict[tuple[int, int], list] = defaultdict(list)
    wait_open: dict[tuple, list] = defaultdict(list)
    for e in events:
        if e.worker < 0:
            continue
        w = (e.rank, e.worker)
        busy.setdefault(w, [])
        if e.kind == "start":
            starts[(e.rank, e.task)] = (e.ts, w)
        elif e.kind == "body-done":
            s = starts.pop((e.rank, e.task), None)
            if s is not None:
                busy[s[1]].append((s[0], e.ts))
        elif e.kind == "wait-begin":
            wait_open[(w, e.task)].append(e.ts)
        elif e.kind == "wait-end":
            stack = wait_open.get((w, e.task))
            if stack:
                waits[w].append((stack.pop(), e.ts))
    # Tasks still running at the end of the trace count as busy until its end.
    for (rank, _task), (ts, w) in starts.items():
        busy[w].append((ts, t1))
    for (w, _task), stack in wait_open.items():
        for ts in stack:
            waits[w].append((ts, t1))
    keys = set(busy)
    if workers is not None:
        keys |= {(r, w) for r in range(workers[0]) for w in range(workers[1])}
    out = []
    for key in sorted(keys):
        b = _subtract(busy.get(key, []), waits.get(key, []))
        out.append(WorkerTime(key[0], key[1], b / 1e9, (wall - b) / 1e9))
    return out


def mean_idle_fraction(times: Sequence[WorkerTime]) -> float:
    if not times:
        return 0.0
    return sum(t.idle_fraction for t in times) / len(times)


def task_intervals(events: Iterable[TraceEvent]) -> dict[tuple[int, int], dict[str, object]]:
    """Per ``(rank, task)``: label and the timestamps of its lifecycle events."""
    tasks: dict[tuple[int, int], dict[str, object]] = {}
    for e in events:
        rec = tasks.setdefault((e.rank, e.task), {"label": e.label})
        rec.setdefault(e.kind, e.ts)
    return tasks


def overlap_witnesses(events: Sequence[TraceEvent]) -> list[tuple[int, str, str]]:
    """Communication tasks that were in flight while a compute task of the same step ran.

    A witness is a ``comm`` task whose ``[start, complete]`` interval
    intersects the ``[start, body-done]`` interval of a ``compute`` task of
    the same rank and step.  Returns ``(rank, comm label, compute label)``.
    """
    comm = defaultdict(list)
    compute = defaultdict(list)
    for (rank, _tid), rec in task_intervals(events).items():
        cat, _name, step = parse_label(rec["label"])
        if step is None or "start" not in rec:
            continue
        if cat == "comm" and "complete" in rec:
            comm[(rank, step)].append((rec["start"], rec["complete"], rec["label"]))
        elif cat == "compute" and "body-done" in rec:
            compute[(rank, step)].append((rec["start"], rec["body-done"], rec["label"]))
    found = []
    for key, cs in sorted(comm.items()):
        ps = compute.get(key, ())
        for a, b, label in sorted(cs):
            for c, d, plabel in ps:
                if max(a, c) < min(b, d):
                    found.append((key[0], label, plabel))
                    break
    return found


def compute_tasks_per_step(events: Iterable[TraceEvent]) -> dict[tuple[int, int], int]:
    counts: dict[tuple[int, int], int] = defaultdict(int)
    for e in events:
        if e.kind == "start":
            cat, _name, step = parse_label(e.label)
            if cat == "compute" and step is not None:
                counts[(e.rank, step)] += 1
    return dict(counts)


def granularity_warnings(subdomains: int, workers: int) -> list[str]:
    if subdomains < workers:
        return [
            f"only {subdomains} subdomain(s) per rank for {workers} workers: "
            f"use a smaller grainsize so every worker has work"
        ]
    return []


def message_warnings(sizes: Iterable[int], threshold: int = 1024) -> list[str]:
    small = sorted({s for s in sizes if s < threshold})
    if small:
        return [f"messages of {small[0]} bytes are below {threshold} bytes: per-message overhead dominates"]
    return []


@dataclass
class RunReport:
    config: dict = field(default_factory=dict)
    wall_s: float = 0.0
    workers: list = field(default_factory=list)
    idle_fraction: float = 0.0
    overlap_witnesses: int = 0
    metric: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    events: int = 0
    schema: int = SCHEMA

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> RunReport:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported report schema {d.get('schema')!r}")
        return cls(**d)


def build_report(
    events: Sequence[TraceEvent],
    *,
    config: dict | None = None,
    metric: dict | None = None,
    warnings: Sequence[str] = (),
    workers: tuple[int, int] | None = None,
) -> RunReport:
    """Assemble a :class:`RunReport`; every trace-derived field comes from ``events``."""
    times = worker_times(events, workers)
    t0, t1 = trace_span(events)
    warn = list(warnings)
    if workers is not None:
        per_step = compute_tasks_per_step(events)
        if per_step:
            warn += granularity_warnings(min(per_step.values()), workers[1])
    return RunReport(
        config=dict(config or {}),
        wall_s=(t1 - t0) / 1e9,
        workers=[
            {"rank": t.rank, "worker": t.worker, "busy_s": t.busy_s, "idle_s": t.idle_s,
             "idle_fraction": t.idle_fraction}
            for t in times
        ],
        idle_fraction=mean_idle_fraction(times),
        overlap_witnesses=len(overlap_witnesses(events)),
        metric=dict(metric or {}),
        warnings=list(dict.fromkeys(warn)),
        events=len(events),
    )
