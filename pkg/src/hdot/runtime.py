"""Data-flow task runtime.

Tasks declare accesses on buffer regions.  A task becomes ready once every
earlier, still-live access that conflicts with one of its strong accesses
has been released; accesses are released when their task completes, i.e.
after its body returned, all its children completed and every request bound
to it finished.

Nesting follows a top-down contract.  Each task owns the dependency domain
of its children.  A child's strong access must be contained in one of the
parent's accesses.  If that parent access is weak, the child additionally
waits for the parent's outer predecessors on the overlap, so fine-grained
children link straight into the enclosing graph while the parent itself
never waits.  Successors of a weak access wait only for the children that
touched the overlapping part (resolved once the weak task's body returned).
"""

from __future__ import annotations

import enum
import itertools
import logging
import random
import threading
from collections import deque
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContainmentError, HdotError, ProtocolError, ReductionError, RuntimeClosedError, TaskError
from .regions import Access, IntervalIndex, Mode, Region, conflicts
from .serial import Baton
from .trace import Tracer, now

log = logging.getLogger(__name__)

POLICIES = ("fifo", "random")

_tls = threading.local()


class TaskState(enum.IntEnum):
    CREATED = 0
    BLOCKED = 1
    READY = 2
    RUNNING = 3
    BODY_DONE = 4
    COMPLETED = 5


class _Record:
    __slots__ = ("task", "region", "mode", "op", "released", "succ", "preds", "scope", "superseded", "cover", "retired")

    def __init__(self, task, region, mode, op):
        self.task = task
        self.region = region
        self.mode = mode
        self.op = op
        self.released = False
        self.succ = []
        self.preds = ()
        self.scope = None
        self.superseded = False
        self.cover = None
        self.retired = ()


class _ReductionScope:
    __slots__ = ("region", "op", "dtype", "identity", "slots", "active", "closed", "ordered")

    def __init__(self, region, op, dtype, ordered=False):
        self.region = region
        self.op = op
        self.ordered = ordered
        self.dtype = dtype
        self.identity = _identity_for(op, dtype)
        self.slots = {}
        self.active = 0
        self.closed = False


def _identity_for(op, dtype):
    dtype = np.dtype(dtype)
    if dtype.kind in "iu" and op.name in ("max", "min"):
        info = np.iinfo(dtype)
        return info.min if op.name == "max" else info.max
    return op.identity


def _pending_preds(rec: _Record) -> tuple:
    """Predecessors of a weak record that can still delay anyone.

    A released weak predecessor stays relevant while its own predecessors
    are pending: its task may complete (having no conflicting children)
    before the accesses it was ordered after.  Drops what no longer matters.
    """
    preds = rec.preds
    if preds:
        live = tuple(p for p in preds if not p.released or (p.mode.weak and _pending_preds(p)))
        if len(live) != len(preds):
            rec.preds = live
        return live
    return preds


def _permits(rec: _Record, acc: Access) -> bool:
    """Whether a parent access lets a child declare ``acc`` inside it."""
    if acc.mode is Mode.REDUCTION:
        return rec.mode.writes or (rec.mode is Mode.REDUCTION and rec.op == acc.op)
    if acc.mode.writes:
        return rec.mode.writes
    return rec.mode is not Mode.REDUCTION


def _covers(intervals: list, lo: int, hi: int) -> bool:
    """True if the union of half-open ``intervals`` contains ``[lo, hi)``."""
    for a, b in sorted(intervals):
        if a > lo:
            return False
        if b > lo:
            lo = b
            if lo >= hi:
                return True
    return lo >= hi


class Task:
    """A unit of deferred work and its bookkeeping."""

    __slots__ = (
        "id", "body", "accesses", "parent", "state", "live_children", "pending_requests", "label",
        "result", "_pending", "_records", "_domain", "_gate_waiters", "_deferred", "_notified",
        "_scopes", "_waiters", "is_root", "_seen",
    )

    def __init__(self, tid, body, accesses, parent, label):
        self.id = tid
        self.body = body
        self.accesses = tuple(accesses)
        self.parent = parent
        self.state = TaskState.CREATED
        self.live_children = 0
        self.pending_requests = 0
        self.label = label
        self.result = None
        self.is_root = False
        self._pending = 0
        self._records = ()
        self._domain: dict[int, IntervalIndex] = {}
        self._gate_waiters = []
        self._deferred = 0
        self._notified = 0
        self._scopes: dict = {}
        self._waiters = 0
        self._seen = None

    @property
    def parent_id(self) -> int | None:
        return None if self.parent is None else self.parent.id

    @property
    def completed(self) -> bool:
        return self.state is TaskState.COMPLETED

    def __repr__(self):
        return f"<Task {self.id} {self.label!r} {self.state.name.lower()}>"


def current_runtime() -> Runtime | None:
    return getattr(_tls, "runtime", None)


def current_task() -> Task | None:
    return getattr(_tls, "task", None)


class Runtime:
    """A fixed pool of workers executing tasks in data-flow order.

    Args:
        workers: number of workers; the thread calling :meth:`run` is worker 0.
        seed: seeds the per-worker RNGs used for victim selection (and for
            the whole interleaving when ``baton`` is given).
        policy: ``"fifo"`` pops the oldest ready task of the own queue;
            ``"random"`` pops a random one.  Stealing always picks a random
            victim.
        rank: rank id stamped on trace events.
        tracer: optional :class:`~hdot.trace.Tracer`.
        baton: serial scheduler shared with other runtimes; makes execution
            a deterministic function of the seed.
    """

    def __init__(
        self,
        workers: int = 1,
        *,
        seed: int = 0,
        policy: str = "fifo",
        rank: int = 0,
        tracer: Tracer | None = None,
        baton: Baton | None = None,
        on_progress: Callable[[], None] | None = None,
    ):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        if policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        self.workers = workers
        self.seed = seed
        self.policy = policy
        self.rank = rank
        self.tracer = tracer
        self._baton = baton
        self._on_progress = on_progress
        self._lock = threading.Lock()
        self._cv = threading.Condition(self._lock)
        self._queues = [deque() for _ in range(workers)]
        self._rngs = [random.Random(seed * 1_000_003 + rank * 7919 + w) for w in range(workers)]
        self._nready = 0
        self._idle = 0
        self._rr = itertools.count()
        self._ids = itertools.count(1)
        self._buf_ids = itertools.count()
        self._buffers: dict[int, np.ndarray] = {}
        self._started = False
        self._closing = False
        self._closed = False
        self._error: BaseException | None = None
        self._root: Task | None = None
        self._tbufs = None
        self._foreign = None
        if tracer is not None:
            self._tbufs = [tracer.buffer(rank, w) for w in range(workers)]
            self._foreign = tracer.buffer(rank, -1)
        self.stats = {"spawned": 0, "completed": 0, "steals": 0}

    # -- buffers -------------------------------------------------------------

    def register_buffer(self, length: int, dtype=np.float64) -> int:
        """Allocate a zero-filled buffer of ``length`` elements and return its handle."""
        if length <= 0:
            raise ValueError("buffer length must be positive")
        with self._lock:
            h = next(self._buf_ids)
            self._buffers[h] = np.zeros(length, dtype=dtype)
        return h

    def register_array(self, array: np.ndarray) -> int:
        """Register existing storage; regions index its flattened elements."""
        if array.size == 0:
            raise ValueError("buffer length must be positive")
        if not array.flags.c_contiguous:
            raise ValueError("registered arrays must be C-contiguous")
        with self._lock:
            h = next(self._buf_ids)
            self._buffers[h] = array.reshape(-1)
        return h

    def data(self, buf: int) -> np.ndarray:
        return self._buffers[buf]

    def view(self, region: Region) -> np.ndarray:
        return self._buffers[region.buf][region.lo:region.hi]

    def region(self, buf: int, lo: int | None = None, hi: int | None = None) -> Region:
        n = len(self._buffers[buf])
        return Region(buf, 0 if lo is None else lo, n if hi is None else hi)

    # -- tracing -------------------------------------------------------------

    def _emit(self, task: Task, kind: str) -> None:
        if self._tbufs is None:
            return
        if getattr(_tls, "runtime", None) is self:
            self._tbufs[_tls.worker].append((now(), task.id, task.label, kind))
        else:
            self._foreign.append((now(), task.id, task.label, kind))

    # -- task creation -------------------------------------------------------

    def spawn(self, body: Callable[[], object], accesses: Iterable[Access] = (), label: str = "task") -> Task:
        """Create a task; it runs once its strong predecessors released."""
        if self._closed or self._closing:
            raise RuntimeClosedError("spawn after runtime shutdown")
        parent = self._context()
        accesses = tuple(accesses)
        for acc in accesses:
            if not isinstance(acc, Access):
                raise TypeError(f"expected Access, got {acc!r}")
        with self._lock:
            if self._error is not None:
                raise self._error
            task = Task(next(self._ids), body, accesses, parent, label)
            self._register(task, parent)
            parent.live_children += 1
            self.stats["spawned"] += 1
            self._emit(task, "spawn")
            if self._on_progress is not None:
                self._on_progress()
            if task._pending == 0:
                self._make_ready(task)
            else:
                task.state = TaskState.BLOCKED
        return task

    reduction_spawn = spawn

    def _context(self) -> Task:
        if getattr(_tls, "runtime", None) is not self or _tls.task is None:
            raise RuntimeError("tasks can only be created inside Runtime.run()")
        return _tls.task

    def _covering(self, parent: Task, acc: Access) -> tuple[_Record | None, _Record | None]:
        """Parent record that licenses ``acc`` (strong preferred), and any containing record."""
        weak = any_ = None
        for rec in parent._records:
            if rec.region.contains(acc.region):
                any_ = any_ or rec
                if not _permits(rec, acc):
                    continue
                if not rec.mode.weak:
                    return rec, rec
                weak = weak or rec
        return weak, any_

    def _validate(self, task: Task, parent: Task) -> list:
        covers = []
        for acc in task.accesses:
            reg = acc.region
            if reg.buf not in self._buffers:
                raise KeyError(f"unknown buffer {reg.buf}")
            if reg.hi > len(self._buffers[reg.buf]):
                raise ValueError(f"{reg} exceeds buffer length {len(self._buffers[reg.buf])}")
            cover = None
            if not parent.is_root:
                cover, container = self._covering(parent, acc)
                if cover is None and not acc.weak:
                    if container is not None:
                        raise ContainmentError(
                            f"task {task.label!r}: {acc.mode.value} access {reg} is not permitted by the "
                            f"{container.mode.value} access of parent {parent.label!r}"
                        )
                    raise ContainmentError(
                        f"task {task.label!r}: {acc.mode.value} access {reg} is not contained in any "
                        f"region declared by parent {parent.label!r}"
                    )
            if acc.mode is Mode.REDUCTION:
                index = parent._domain.get(reg.buf)
                if index is not None:
                    for q in index.overlapping(reg.lo, reg.hi):
                        if q.mode is Mode.REDUCTION and q.op != acc.op:
                            raise ReductionError(
                                f"reduction {acc.op.name!r} on {reg} overlaps open reduction {q.op.name!r}"
                            )
            covers.append(cover)
        return covers

    def _register(self, task: Task, parent: Task) -> None:
        covers = self._validate(task, parent)
        records = []
        retired = []
        for acc, cover in zip(task.accesses, covers):
            reg = acc.region
            preds = []
            index = parent._domain.get(reg.buf)
            if index is not None:
                for q in index.overlapping(reg.lo, reg.hi):
                    if conflicts(acc.mode, acc.op, q.mode, q.op):
                        preds.append(q)
                        if q.scope is not None and acc.mode is not Mode.REDUCTION:
                            q.scope.closed = True
            if acc.mode.writes and not acc.weak:
                # A strong writer waits for every covered strong predecessor, so later
                # accesses that would conflict with those conflict with the writer too.
                retired += [q for q in preds if not q.mode.weak and reg.contains(q.region)]
            weak_retired = [q for q in preds if reg.contains(q.region)] if acc.weak and acc.mode.writes else ()
            if cover is not None and cover.mode.weak:
                for q in _pending_preds(cover):
                    if q.region.overlaps(reg) and conflicts(acc.mode, acc.op, q.mode, q.op):
                        preds.append(q)
            rec = _Record(task, reg, acc.mode, acc.op)
            if cover is not None and cover.mode.weak:
                rec.cover = cover
            if acc.weak:
                # Gates on a weak writer reach its predecessors through ``preds``; the
                # records go back into the index if it completes before they do.
                rec.preds = tuple(preds)
                rec.retired = weak_retired
                retired += weak_retired
            else:
                for q in preds:
                    self._depend(task, q, reg, acc.mode, acc.op)
            if acc.mode is Mode.REDUCTION:
                key = (reg.buf, reg.lo, reg.hi, acc.op.name, acc.ordered)
                scope = parent._scopes.get(key)
                if scope is None or scope.active == 0 or scope.closed:
                    scope = _ReductionScope(reg, acc.op, self._buffers[reg.buf].dtype, acc.ordered)
                    parent._scopes[key] = scope
                scope.active += 1
                rec.scope = scope
            records.append(rec)
        for rec in records:
            index = parent._domain.get(rec.region.buf)
            if index is None:
                index = parent._domain[rec.region.buf] = IntervalIndex()
            index.add(rec.region.lo, rec.region.hi, rec)
        for q in retired:
            if not q.superseded:
                q.superseded = True
                parent._domain[q.region.buf].remove(q.region.lo, q)
        task._records = tuple(records)

    def _depend(self, task: Task, q: _Record, reg: Region, mode: Mode, op) -> None:
        # Gates reach the same records along many paths; one edge per record (and
        # per overlap and access mode, for gates) is enough and keeps resolution linear.  The set
        # holds the records themselves: an id() could be reused once a record is freed.
        seen = task._seen
        if seen is None:
            seen = task._seen = set()
        if q.mode.weak:
            overlap = Region(reg.buf, max(reg.lo, q.region.lo), min(reg.hi, q.region.hi))
            key = (q, overlap.lo, overlap.hi, mode, op)
            if key in seen:
                return
            seen.add(key)
            owner = q.task
            task._pending += 1
            if owner.state >= TaskState.BODY_DONE:
                self._resolve_gate(task, q, overlap, mode, op)
            else:
                owner._gate_waiters.append((task, q, overlap, mode, op))
        else:
            if q in seen:
                return
            seen.add(q)
            q.succ.append(task)
            task._pending += 1

    def _resolve_gate(self, task: Task, q: _Record, reg: Region, mode: Mode, op) -> None:
        # Called with the gate placeholder still counted in task._pending.
        owner = q.task
        index = owner._domain.get(reg.buf)
        covered = []
        if index is not None:
            for c in list(index.overlapping(reg.lo, reg.hi)):
                if conflicts(mode, op, c.mode, c.op):
                    self._depend(task, c, reg, mode, op)
                    if c.cover is q and c.mode.writes and not c.mode.weak:
                        covered.append((c.region.lo, c.region.hi))
        for p in _pending_preds(q):
            if p.region.overlaps(reg) and conflicts(mode, op, p.mode, p.op):
                # Strong writers spawned under q already wait for q's predecessors.
                if covered and _covers(covered, max(p.region.lo, reg.lo), min(p.region.hi, reg.hi)):
                    continue
                self._depend(task, p, reg, mode, op)
        self._release_one(task)

    def _release_one(self, task: Task) -> None:
        task._pending -= 1
        if task._pending == 0 and task.state is TaskState.BLOCKED:
            self._make_ready(task)

    # -- scheduling ----------------------------------------------------------

    def _make_ready(self, task: Task) -> None:
        task.state = TaskState.READY
        task._seen = None
        self._emit(task, "ready")
        if getattr(_tls, "runtime", None) is self:
            w = _tls.worker
        else:
            w = next(self._rr) % self.workers
        self._queues[w].append(task)
        self._nready += 1
        if self._idle:
            self._cv.notify()

    def _pop(self, w: int) -> Task | None:
        if not self._nready:
            return None
        q = self._queues[w]
        stolen = False
        if not q:
            rng = self._rngs[w]
            victims = [v for v in range(self.workers) if self._queues[v]]
            q = self._queues[rng.choice(victims)]
            stolen = True
        if self.policy == "random" and len(q) > 1:
            i = self._rngs[w].randrange(len(q))
            task = q[i]
            del q[i]
        else:
            task = q.popleft()
        self._nready -= 1
        task.state = TaskState.RUNNING
        if stolen:
            self.stats["steals"] += 1
            self._emit(task, "steal")
        return task

    def _block(self, pred: Callable[[], bool]) -> None:
        # Lock held on entry and exit.
        if self._baton is None:
            self._idle += 1
            try:
                while not pred():
                    self._cv.wait(0.05)
            finally:
                self._idle -= 1
        else:
            self._lock.release()
            try:
                self._baton.wait_until(pred)
            finally:
                self._lock.acquire()

    def _execute(self, task: Task) -> None:
        prev = _tls.task
        _tls.task = task
        self._emit(task, "start")
        try:
            task.result = task.body()
        except BaseException as exc:  # noqa: BLE001 - propagated through run()
            self._fail(exc, task)
        finally:
            _tls.task = prev
        self._emit(task, "body-done")
        with self._lock:
            task.state = TaskState.BODY_DONE
            waiters, task._gate_waiters = task._gate_waiters, []
            for t, q, reg, mode, op in waiters:
                self._resolve_gate(t, q, reg, mode, op)
            self._try_complete(task)
        if self._baton is not None:
            self._baton.yield_()

    def _try_complete(self, task: Task | None) -> None:
        while (
            task is not None
            and task.state is TaskState.BODY_DONE
            and task.live_children == 0
            and task.pending_requests == 0
        ):
            self._complete(task)
            parent = task.parent
            if parent is not None:
                parent.live_children -= 1
                if parent.live_children == 0 and parent._waiters:
                    self._cv.notify_all()
            task = parent

    def _complete(self, task: Task) -> None:
        task.state = TaskState.COMPLETED
        for rec in task._records:
            scope = rec.scope
            if scope is not None:
                scope.active -= 1
                if scope.active == 0:
                    self._combine(scope)
        for rec in task._records:
            rec.released = True
            index = task.parent._domain[rec.region.buf]
            if not rec.superseded:
                index.remove(rec.region.lo, rec)
            for q in rec.retired:
                if not q.released and q.superseded:
                    q.superseded = False
                    index.add(q.region.lo, q.region.hi, q)
            rec.retired = ()
            succ, rec.succ = rec.succ, []
            for s in succ:
                self._release_one(s)
        task._records = ()
        self.stats["completed"] += 1
        self._emit(task, "complete")
        if self._on_progress is not None:
            self._on_progress()
        if task.is_root:
            self._cv.notify_all()

    def _combine(self, scope: _ReductionScope) -> None:
        target = self.view(scope.region)
        for w in sorted(scope.slots):
            target[...] = scope.op.combine(target, scope.slots[w])
        scope.slots.clear()

    # -- operations called from task bodies -----------------------------------

    def reduction_slot(self, region: Region) -> np.ndarray:
        """Private accumulator of the calling worker for a reduction access of the current task."""
        task = self._context()
        for rec in task._records:
            if rec.scope is not None and rec.region == region:
                scope = rec.scope
                break
        else:
            raise ReductionError(f"current task declares no reduction on {region}")
        w = task.id if scope.ordered else _tls.worker
        with self._lock:
            slot = scope.slots.get(w)
            if slot is None:
                slot = scope.slots[w] = np.full(len(region), scope.identity, dtype=scope.dtype)
        return slot

    def taskwait(self) -> None:
        """Wait for all children of the calling context, running ready tasks meanwhile."""
        task = self._context()
        w = _tls.worker
        with self._lock:
            self._help_until(task, w, lambda: task.live_children == 0)

    def _help_until(self, task: Task, w: int, done: Callable[[], bool]) -> None:
        # Lock held on entry and exit.
        while not done():
            if self._error is not None:
                raise self._error
            t = self._pop(w)
            if t is None:
                task._waiters += 1
                self._emit(task, "wait-begin")
                try:
                    self._block(lambda: done() or self._nready > 0 or self._error is not None)
                finally:
                    task._waiters -= 1
                    self._emit(task, "wait-end")
                continue
            self._lock.release()
            try:
                self._execute(t)
            finally:
                self._lock.acquire()
        if self._error is not None:
            raise self._error

    def defer_completion(self, task: Task, n: int) -> None:
        """Hold ``task`` (and its releases) until ``n`` more notifications arrive."""
        if n < 0:
            raise ValueError("request count must be non-negative")
        with self._lock:
            if task.state is not TaskState.RUNNING:
                raise ProtocolError(f"defer_completion on {task!r}: body is not executing")
            task.pending_requests += n
            task._deferred += n

    def notify_request_done(self, task: Task) -> None:
        with self._lock:
            if task.pending_requests <= 0:
                raise ProtocolError(f"notify_request_done on {task!r} without a matching deferral")
            task.pending_requests -= 1
            task._notified += 1
            self._emit(task, "request-done")
            self._try_complete(task)

    def emit_current(self, kind: str) -> None:
        task = current_task()
        if task is not None and current_runtime() is self:
            self._emit(task, kind)

    # -- lifecycle -------------------------------------------------------------

    def abort(self, exc: BaseException) -> None:
        with self._lock:
            if self._error is None:
                self._error = exc
            self._cv.notify_all()

    def _fail(self, exc: BaseException, task: Task | None) -> None:
        if isinstance(exc, HdotError) or not isinstance(exc, Exception):
            err = exc
        else:
            err = TaskError(f"task {task.label if task else '?'!r} raised {exc!r}")
            err.__cause__ = exc
        log.debug("runtime %d aborting: %r", self.rank, err)
        self.abort(err)

    def _enter_thread(self, w: int) -> None:
        _tls.runtime = self
        _tls.worker = w
        _tls.task = None
        if self._baton is not None:
            self._baton.enter((self.rank, w))

    def _leave_thread(self) -> None:
        if self._baton is not None and self._baton.pid is not None:
            self._baton.leave()
        _tls.runtime = None
        _tls.task = None

    def _worker_main(self, w: int) -> None:
        try:
            self._enter_thread(w)
            with self._lock:
                while not self._closing and self._error is None:
                    t = self._pop(w)
                    if t is None:
                        self._block(lambda: self._nready > 0 or self._closing or self._error is not None)
                        continue
                    self._lock.release()
                    try:
                        self._execute(t)
                    finally:
                        self._lock.acquire()
        except BaseException as exc:  # noqa: BLE001
            self._fail(exc, None)
        finally:
            self._leave_thread()

    def run(self, root: Callable[[], object]):
        """Execute ``root`` as the main context and return its result.

        Returns after the implicit final taskwait: every task spawned during
        the run has completed.
        """
        if self._started:
            raise RuntimeError("a Runtime instance runs once")
        self._started = True
        main = Task(0, root, (), None, "main")
        main.is_root = True
        main.state = TaskState.RUNNING
        self._root = main
        threads = [
            threading.Thread(target=self._worker_main, args=(w,), name=f"hdot-r{self.rank}-w{w}", daemon=True)
            for w in range(1, self.workers)
        ]
        for th in threads:
            th.start()
        try:
            self._enter_thread(0)
            self._emit(main, "spawn")
            self._execute(main)
            with self._lock:
                self._help_until(main, 0, lambda: main.state is TaskState.COMPLETED)
        except BaseException as exc:  # noqa: BLE001
            self._fail(exc, main)
        finally:
            with self._lock:
                self._closing = True
                self._cv.notify_all()
            self._leave_thread()
            for th in threads:
                th.join()
            self._closed = True
        if self._error is not None:
            raise self._error
        return main.result


def run(workers: int, root: Callable[[], object], **kwargs):
    """Create a :class:`Runtime` with ``workers`` workers and run ``root`` on it."""
    return Runtime(workers, **kwargs).run(root)


def spawn(body, accesses: Sequence[Access] = (), label: str = "task") -> Task:
    rt = current_runtime()
    if rt is None:
        raise RuntimeError("no runtime is active on this thread")
    return rt.spawn(body, accesses, label)


def taskwait() -> None:
    rt = current_runtime()
    if rt is None:
        raise RuntimeError("no runtime is active on this thread")
    rt.taskwait()
