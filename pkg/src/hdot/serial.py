"""Seeded serial scheduling of worker threads.

In deterministic mode every worker thread (of every rank) is a participant
of a single :class:`Baton`.  Exactly one participant runs at a time; at each
scheduling point the holder publishes the condition it is waiting for and
the baton is handed to a runnable participant drawn from a seeded RNG.  The
interleaving, and therefore the trace, is a pure function of the seed.

If no participant is runnable the program cannot make progress, which is
reported as a :class:`~hdot.errors.DeadlockError` in every participant.
"""

from __future__ import annotations

import random
import threading
from typing import Callable, Hashable

from .errors import DeadlockError


def _always() -> bool:
    return True


class Baton:
    def __init__(self, seed: int, participants: int):
        self._cv = threading.Condition()
        self._rng = random.Random(seed)
        self._waiting: dict[Hashable, Callable[[], bool]] = {}
        self._holder = None
        self._expected = participants
        self._entered = 0
        self._tls = threading.local()
        self.error: DeadlockError | None = None

    @property
    def pid(self):
        return getattr(self._tls, "pid", None)

    def enter(self, pid: Hashable) -> None:
        self._tls.pid = pid
        with self._cv:
            self._waiting[pid] = _always
            self._entered += 1
            if self._entered == self._expected:
                self._handoff()
            self._await(pid)

    def leave(self) -> None:
        pid = self._tls.pid
        with self._cv:
            self._waiting.pop(pid, None)
            self._expected -= 1
            self._entered -= 1
            if self._holder == pid:
                self._holder = None
                self._handoff()
            self._tls.pid = None

    def wait_until(self, pred: Callable[[], bool]) -> None:
        """Block the calling participant until ``pred`` holds and it is scheduled."""
        if self.error is not None:
            raise self.error
        pid = self._tls.pid
        with self._cv:
            self._waiting[pid] = pred
            self._holder = None
            self._handoff()
            self._await(pid)

    def yield_(self) -> None:
        self.wait_until(_always)

    def _handoff(self) -> None:
        if self._holder is not None or self._entered < self._expected:
            return
        runnable = [p for p in sorted(self._waiting) if self._waiting[p]()]
        if not runnable:
            if self._waiting and self.error is None:
                self.error = DeadlockError(
                    f"no runnable worker among {sorted(self._waiting)}: every participant is blocked"
                )
            self._cv.notify_all()
            return
        self._holder = self._rng.choice(runnable)
        self._cv.notify_all()

    def _await(self, pid) -> None:
        while self._holder != pid:
            if self.error is not None:
                raise self.error
            self._cv.wait()
        del self._waiting[pid]
