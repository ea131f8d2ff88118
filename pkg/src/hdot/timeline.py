"""Per-worker timeline of a trace, rendered as SVG.

One row per ``(rank, worker)``; a bar per task execution coloured by label
category, with blocking waits drawn as grey bars on top.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402

from .report import parse_label, trace_span  # noqa: E402
from .trace import TraceEvent  # noqa: E402

log = logging.getLogger(__name__)

COLORS = {
    "compute": "#4c72b0",
    "comm": "#dd8452",
    "halo": "#55a868",
    "scalar": "#8172b2",
    "nest": "#937860",
    "": "#8c8c8c",
}
WAIT_COLOR = "#d0d0d0"


def timeline_bars(events: Sequence[TraceEvent]) -> dict[tuple[int, int], list[tuple[int, int, str]]]:
    """``(rank, worker) -> [(start_ns, end_ns, category)]``; waits use category ``"wait"``."""
    t0, t1 = trace_span(events)
    open_tasks: dict[tuple[int, int], tuple[int, tuple[int, int], str]] = {}
    open_waits: dict[tuple, list[int]] = {}
    bars: dict[tuple[int, int], list[tuple[int, int, str]]] = {}
    for e in events:
        if e.worker < 0:
            continue
        w = (e.rank, e.worker)
        bars.setdefault(w, [])
        if e.kind == "start":
            open_tasks[(e.rank, e.task)] = (e.ts, w, parse_label(e.label)[0])
        elif e.kind == "body-done":
            s = open_tasks.pop((e.rank, e.task), None)
            if s is not None:
                bars[s[1]].append((s[0] - t0, e.ts - t0, s[2]))
        elif e.kind == "wait-begin":
            open_waits.setdefault((w, e.task), []).append(e.ts)
        elif e.kind == "wait-end":
            stack = open_waits.get((w, e.task))
            if stack:
                bars[w].append((stack.pop() - t0, e.ts - t0, "wait"))
    for ts, w, cat in open_tasks.values():
        bars[w].append((ts - t0, t1 - t0, cat))
    return bars


def render_timeline(events: Sequence[TraceEvent], path: str | Path, title: str | None = None) -> Path:
    """Write an SVG timeline of ``events`` to ``path`` and return the path."""
    path = Path(path)
    bars = timeline_bars(events)
    rows = sorted(bars)
    fig, ax = plt.subplots(figsize=(12, 0.45 * max(len(rows), 1) + 1.5))
    for y, key in enumerate(rows):
        tasks = [(a, b, c) for a, b, c in bars[key] if c != "wait"]
        waits = [(a, b) for a, b, c in bars[key] if c == "wait"]
        for cat in sorted({c for _, _, c in tasks}):
            spans = [(a / 1e6, (b - a) / 1e6) for a, b, c in tasks if c == cat]
            ax.broken_barh(spans, (y - 0.4, 0.8), facecolors=COLORS.get(cat, COLORS[""]), linewidth=0)
        if waits:
            ax.broken_barh([(a / 1e6, (b - a) / 1e6) for a, b in waits], (y - 0.15, 0.3),
                           facecolors=WAIT_COLOR, linewidth=0)
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels([f"r{r} w{w}" for r, w in rows])
    ax.invert_yaxis()
    ax.set_xlabel("time [ms]")
    if title:
        ax.set_title(title)
    used = sorted({c for key in rows for _, _, c in bars[key]} - {"wait"})
    handles = [Patch(color=COLORS.get(c, COLORS[""]), label=c or "other") for c in used]
    if any(c == "wait" for key in rows for _, _, c in bars[key]):
        handles.append(Patch(color=WAIT_COLOR, label="wait"))
    if handles:
        ax.legend(handles=handles, loc="upper right", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    log.info("timeline with %d rows written to %s", len(rows), path)
    return path
