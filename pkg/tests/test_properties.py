import pytest

from hdot.regions import Region, inout
from hdot.trace import TraceEvent

from graphgen import audit, run_random_program


@pytest.mark.parametrize("block", range(4))
def test_random_graphs_never_overlap_conflicting_accesses(block):
    for seed in range(block * 50, block * 50 + 50):
        spawned, events = run_random_program(seed)
        assert audit(spawned, events) == [], f"seed {seed}"


def test_audit_detects_a_planted_overlap():
    spawned, events = run_random_program(0, workers=1, tasks=2)
    a, b = spawned[0], spawned[1]
    # Pretend the two roots wrote overlapping regions at the same time.
    a.accesses = [inout(Region(99, 0, 4))]
    b.accesses = [inout(Region(99, 2, 6))]
    fake = [TraceEvent(0, 0, 0, a.id, a.label, "start"), TraceEvent(10, 0, 0, a.id, a.label, "body-done"),
            TraceEvent(5, 0, 1, b.id, b.label, "start"), TraceEvent(15, 0, 1, b.id, b.label, "body-done")]
    assert audit([a, b], fake) == [(a.label, b.label)]
