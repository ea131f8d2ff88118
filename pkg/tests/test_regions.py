import pytest

from hdot.regions import (
    Access,
    IntervalIndex,
    Mode,
    Region,
    conflicts,
    in_,
    inout,
    out,
    reduction,
    reduction_op,
    weak_in,
    weak_out,
)


def test_region_rejects_empty_interval():
    with pytest.raises(ValueError):
        Region(0, 3, 3)


def test_overlap_and_containment_are_per_buffer():
    a, b = Region(0, 0, 4), Region(0, 3, 6)
    assert a.overlaps(b) and b.overlaps(a)
    assert not a.overlaps(Region(0, 4, 6))
    assert not a.overlaps(Region(1, 0, 4))
    assert a.contains(Region(0, 1, 3))
    assert not a.contains(b)
    assert len(b) == 3


@pytest.mark.parametrize(
    "a, b, expected",
    [
        (Mode.IN, Mode.IN, False),
        (Mode.IN, Mode.OUT, True),
        (Mode.OUT, Mode.IN, True),
        (Mode.INOUT, Mode.INOUT, True),
        (Mode.WEAK_IN, Mode.IN, False),
        (Mode.WEAK_OUT, Mode.IN, True),
    ],
)
def test_conflict_table(a, b, expected):
    assert conflicts(a, None, b, None) is expected


def test_reductions_conflict_only_across_operators_and_with_plain_accesses():
    s, m = reduction_op("sum"), reduction_op("max")
    assert not conflicts(Mode.REDUCTION, s, Mode.REDUCTION, s)
    assert conflicts(Mode.REDUCTION, s, Mode.REDUCTION, m)
    assert conflicts(Mode.REDUCTION, s, Mode.IN, None)
    assert conflicts(Mode.IN, None, Mode.REDUCTION, s)


def test_access_helpers():
    r = Region(0, 0, 2)
    assert in_(r).mode is Mode.IN and not in_(r).weak
    assert out(r).mode.writes and inout(r).mode.writes
    assert weak_in(r).weak and weak_out(r).weak
    red = reduction(r, "max", ordered=True)
    assert red.op.name == "max" and red.ordered


def test_access_operator_must_match_mode():
    r = Region(0, 0, 2)
    with pytest.raises(ValueError):
        Access(r, Mode.IN, reduction_op("sum"))
    with pytest.raises(ValueError):
        Access(r, Mode.REDUCTION)
    with pytest.raises(ValueError):
        reduction(r, "median")


def test_interval_index_queries():
    idx = IntervalIndex()
    idx.add(0, 10, "wide")
    idx.add(4, 5, "a")
    idx.add(12, 14, "b")
    assert set(idx.overlapping(4, 6)) == {"wide", "a"}
    assert set(idx.overlapping(10, 12)) == set()
    assert set(idx.overlapping(13, 20)) == {"b"}
    idx.remove(0, "wide")
    assert set(idx.overlapping(0, 4)) == set()
    assert len(idx) == 2
    with pytest.raises(KeyError):
        idx.remove(0, "wide")
