from hdot.bench.heat2d import heat2d_run
from hdot.timeline import render_timeline, timeline_bars
from hdot.trace import TraceEvent


def test_bars_per_worker_with_waits():
    events = [
        TraceEvent(0, 0, 0, 1, "compute:a:0", "start"),
        TraceEvent(5, 0, 0, 1, "compute:a:0", "wait-begin"),
        TraceEvent(7, 0, 0, 1, "compute:a:0", "wait-end"),
        TraceEvent(9, 0, 0, 1, "compute:a:0", "body-done"),
        TraceEvent(3, 1, 0, 2, "comm:send:0", "start"),
        TraceEvent(4, 1, 0, 2, "comm:send:0", "body-done"),
    ]
    bars = timeline_bars(events)
    assert (0, 9, "compute") in bars[(0, 0)] and (5, 7, "wait") in bars[(0, 0)]
    assert bars[(1, 0)] == [(3, 4, "comm")]


def test_render_writes_svg(tmp_path):
    res = heat2d_run("hdot", steps=2, size=(16, 16), ranks=2, workers=2, grainsize=4)
    path = tmp_path / "t.svg"
    render_timeline(res.events, path, title="heat2d")
    assert path.read_text().lstrip().startswith("<?xml") and "<svg" in path.read_text()


def test_render_empty_trace(tmp_path):
    path = tmp_path / "empty.svg"
    render_timeline([], path)
    assert path.exists()
