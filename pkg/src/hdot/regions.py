"""Dependency targets: buffer regions, access modes and reduction operators."""

from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

import numpy as np


@dataclass(frozen=True, slots=True)
class Region:
    """Half-open element interval ``[lo, hi)`` of a registered buffer."""

    buf: int
    lo: int
    hi: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty or inverted region [{self.lo}, {self.hi})")

    def overlaps(self, other: Region) -> bool:
        return self.buf == other.buf and self.lo < other.hi and other.lo < self.hi

    def contains(self, other: Region) -> bool:
        return self.buf == other.buf and self.lo <= other.lo and other.hi <= self.hi

    def __len__(self) -> int:
        return self.hi - self.lo


class Mode(enum.Enum):
    IN = "in"
    OUT = "out"
    INOUT = "inout"
    WEAK_IN = "weak-in"
    WEAK_OUT = "weak-out"
    WEAK_INOUT = "weak-inout"
    REDUCTION = "reduction"



# Plain attributes rather than properties: these sit on the spawn hot path.
for _m in Mode:
    _m.weak = _m in (Mode.WEAK_IN, Mode.WEAK_OUT, Mode.WEAK_INOUT)
    _m.writes = _m in (Mode.OUT, Mode.INOUT, Mode.WEAK_OUT, Mode.WEAK_INOUT)
del _m


@dataclass(frozen=True)
class ReductionOp:
    """An associative, commutative operator together with its identity."""

    name: str
    combine: Callable[[np.ndarray, np.ndarray], np.ndarray]
    identity: Any

    def __repr__(self):
        return f"ReductionOp({self.name!r})"


REDUCTION_OPS = {
    "sum": ReductionOp("sum", np.add, 0),
    "prod": ReductionOp("prod", np.multiply, 1),
    "max": ReductionOp("max", np.maximum, -np.inf),
    "min": ReductionOp("min", np.minimum, np.inf),
}


def reduction_op(op: str | ReductionOp) -> ReductionOp:
    if isinstance(op, ReductionOp):
        return op
    try:
        return REDUCTION_OPS[op]
    except KeyError:
        raise ValueError(f"unknown reduction operator {op!r}") from None


@dataclass(frozen=True)
class Access:
    region: Region
    mode: Mode
    op: ReductionOp | None = None
    ordered: bool = False

    def __post_init__(self):
        if (self.mode is Mode.REDUCTION) != (self.op is not None):
            raise ValueError("reduction accesses (and only those) carry an operator")

    @property
    def weak(self) -> bool:
        return self.mode.weak


def in_(region: Region) -> Access:
    return Access(region, Mode.IN)


def out(region: Region) -> Access:
    return Access(region, Mode.OUT)


def inout(region: Region) -> Access:
    return Access(region, Mode.INOUT)


def weak_in(region: Region) -> Access:
    return Access(region, Mode.WEAK_IN)


def weak_out(region: Region) -> Access:
    return Access(region, Mode.WEAK_OUT)


def weak_inout(region: Region) -> Access:
    return Access(region, Mode.WEAK_INOUT)


def reduction(region: Region, op: str | ReductionOp = "sum", ordered: bool = False) -> Access:
    """Reduction access.  ``ordered`` gives every task its own slot and combines
    them in spawn order, so floating-point results do not depend on scheduling."""
    return Access(region, Mode.REDUCTION, reduction_op(op), ordered)


_RED = Mode.REDUCTION


def conflicts(a_mode: Mode, a_op, b_mode: Mode, b_op) -> bool:
    """Whether two overlapping accesses must be ordered."""
    if a_mode is _RED:
        return b_mode is not _RED or a_op != b_op
    return b_mode is _RED or a_mode.writes or b_mode.writes


@dataclass(eq=False)
class IntervalIndex:
    """Live intervals of one buffer, sorted by lower bound.

    Queries scan from ``lo - max_len`` so the cost is a bisection plus the
    number of candidates near the query window.
    """

    _los: list = field(default_factory=list)
    _items: list = field(default_factory=list)
    _max_len: int = 0

    def add(self, lo: int, hi: int, item) -> None:
        i = bisect.bisect_right(self._los, lo)
        self._los.insert(i, lo)
        self._items.insert(i, (lo, hi, item))
        self._max_len = max(self._max_len, hi - lo)

    def remove(self, lo: int, item) -> None:
        i = bisect.bisect_left(self._los, lo)
        while i < len(self._items):
            if self._items[i][2] is item:
                del self._los[i]
                del self._items[i]
                return
            i += 1
        raise KeyError(item)

    def overlapping(self, lo: int, hi: int) -> Iterator:
        start = bisect.bisect_left(self._los, lo - self._max_len)
        stop = bisect.bisect_left(self._los, hi)
        for a, b, item in self._items[start:stop]:
            if a < hi and lo < b:
                yield item

    def __len__(self):
        return len(self._items)
