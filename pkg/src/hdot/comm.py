"""In-process message passing between simulated ranks.

Every rank runs its own :class:`~hdot.runtime.Runtime`; a shared
:class:`World` carries point-to-point channels and collectives.  Messages
are matched FIFO per ``(source, destination, tag)``.  Sends use rendezvous
semantics: data is copied from the sender's buffer when the matching
receive is posted, so a send request stays pending until then.

Matching and completion happen eagerly in whichever thread posts the second
half of a pair; completion callbacks (used by :meth:`Comm.ta_wait`) run in
that thread after the world lock is released.  A watchdog thread aborts the
whole world when nothing progresses for ``watchdog_timeout`` seconds.
"""

from __future__ import annotations

import itertools
import logging
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DeadlockError, HdotError, ProtocolError
from .regions import ReductionOp, reduction_op
from .runtime import Runtime, current_runtime, current_task
from .serial import Baton
from .trace import Tracer

log = logging.getLogger(__name__)


class Request:
    """Handle of an in-flight operation."""

    __slots__ = ("id", "kind", "owner", "peer", "tag", "buf", "state", "error", "seq", "_event", "_callbacks")

    def __init__(self, rid, kind, owner, peer=None, tag=None, buf=None):
        self.id = rid
        self.kind = kind
        self.owner = owner
        self.peer = peer
        self.tag = tag
        self.buf = buf
        self.state = "pending"
        self.error: BaseException | None = None
        self.seq = None
        self._event = threading.Event()
        self._callbacks: list[Callable[[], None]] = []

    @property
    def done(self) -> bool:
        return self.state == "complete"

    def __repr__(self):
        return f"<Request {self.id} {self.kind} rank={self.owner} peer={self.peer} tag={self.tag} {self.state}>"


@dataclass
class _Collective:
    kind: str
    op: ReductionOp | None
    length: int
    parts: dict


class World:
    """Shared transport of ``size`` ranks."""

    def __init__(
        self,
        size: int,
        *,
        watchdog_timeout: float = 5.0,
        poll_interval: float = 0.01,
        log_message_sizes: bool = False,
        baton: Baton | None = None,
    ):
        if size < 1:
            raise ValueError("world size must be >= 1")
        self.size = size
        self.watchdog_timeout = watchdog_timeout
        self.poll_interval = poll_interval
        self.baton = baton
        self._lock = threading.Lock()
        self._sends: dict[tuple, deque] = defaultdict(deque)
        self._recvs: dict[tuple, deque] = defaultdict(deque)
        self._sent_seq: dict[tuple, int] = defaultdict(int)
        self._recv_seq: dict[tuple, int] = defaultdict(int)
        self._coll: dict[int, _Collective] = {}
        self._coll_requests: dict[int, list] = {}
        self._epochs = [0] * size
        self._ids = itertools.count()
        self.progress = 0
        self.aborted: BaseException | None = None
        self.log_message_sizes = log_message_sizes
        self.message_sizes: list[int] = []
        self.runtimes: list[Runtime | None] = [None] * size
        self.comms = [Comm(self, r) for r in range(size)]

    def bump(self) -> None:
        self.progress += 1

    def abort(self, exc: BaseException) -> None:
        with self._lock:
            if self.aborted is None:
                self.aborted = exc
            exc = self.aborted
        for rt in self.runtimes:
            if rt is not None:
                rt.abort(exc)

    def audit(self) -> dict[tuple, tuple[int, int]]:
        """``(src, dst, tag) -> (sent, received)`` message counts."""
        with self._lock:
            keys = set(self._sent_seq) | set(self._recv_seq)
            return {k: (self._sent_seq[k], self._recv_seq[k]) for k in keys}

    def unmatched(self) -> list[Request]:
        with self._lock:
            out = [r for q in self._sends.values() for r in q]
            out += [r for q in self._recvs.values() for r in q]
            out += [r for reqs in self._coll_requests.values() for r in reqs]
        return out

    def diagnostic(self) -> str:
        pend = self.unmatched()
        lines = [f"no global progress for {self.watchdog_timeout:g}s; {len(pend)} unmatched request(s)"]
        for r in pend[:20]:
            lines.append(f"  {r!r}")
        return "\n".join(lines)

    def _finish(self, done: list[Request]) -> None:
        # World lock must not be held: callbacks may re-enter a runtime.
        for req in done:
            req._event.set()
        for req in done:
            cbs, req._callbacks = req._callbacks, []
            for cb in cbs:
                cb()

    def add_done_callback(self, req: Request, cb: Callable[[], None]) -> None:
        with self._lock:
            if not req.done:
                req._callbacks.append(cb)
                return
        cb()


class Comm:
    """One rank's view of a :class:`World` (the communicator handle)."""

    def __init__(self, world: World, rank: int):
        self.world = world
        self.rank = rank

    @property
    def size(self) -> int:
        return self.world.size

    def _check_peer(self, peer: int) -> None:
        if not 0 <= peer < self.world.size:
            raise ValueError(f"invalid peer {peer} for world of size {self.world.size}")

    @staticmethod
    def _check_buffer(buf) -> np.ndarray:
        if not isinstance(buf, np.ndarray):
            raise TypeError("message buffers are numpy arrays")
        if not buf.flags.c_contiguous:
            raise ValueError("message buffers must be contiguous (pack halos into staging arrays)")
        return buf

    def _new(self, kind, peer=None, tag=None, buf=None) -> Request:
        return Request(next(self.world._ids), kind, self.rank, peer, tag, buf)

    # -- point to point ----------------------------------------------------------

    def isend(self, peer: int, tag: int, buf: np.ndarray) -> Request:
        self._check_peer(peer)
        self._check_buffer(buf)
        req = self._new("isend", peer, tag, buf)
        self._post(req, (self.rank, peer, tag), sending=True)
        return req

    def irecv(self, peer: int, tag: int, buf: np.ndarray) -> Request:
        self._check_peer(peer)
        self._check_buffer(buf)
        req = self._new("irecv", peer, tag, buf)
        self._post(req, (peer, self.rank, tag), sending=False)
        return req

    def _post(self, req: Request, key: tuple, sending: bool) -> None:
        w = self.world
        with w._lock:
            if w.aborted is not None:
                raise w.aborted
            w.progress += 1
            if sending:
                req.seq = w._sent_seq[key]
                w._sent_seq[key] += 1
                if w.log_message_sizes:
                    w.message_sizes.append(int(req.buf.nbytes))
                waiting = w._recvs[key]
                if not waiting:
                    w._sends[key].append(req)
                    return
                send, recv = req, waiting.popleft()
            else:
                waiting = w._sends[key]
                if not waiting:
                    w._recvs[key].append(req)
                    return
                send, recv = waiting.popleft(), req
            if send.buf.size != recv.buf.size:
                err = ProtocolError(
                    f"message length mismatch on channel {key}: send {send.buf.size} vs recv {recv.buf.size}"
                )
                send.error = recv.error = err
            else:
                if send.seq != w._recv_seq[key]:
                    raise AssertionError("FIFO violated")  # guarded by construction
                np.copyto(recv.buf.reshape(-1), send.buf.reshape(-1), casting="same_kind")
                recv.seq = send.seq
                w._recv_seq[key] += 1
                err = None
            send.state = recv.state = "complete"
        if err is not None:
            w.abort(err)
            w._finish([send, recv])
            raise err
        w._finish([send, recv])

    def send(self, peer: int, tag: int, buf: np.ndarray) -> None:
        self.wait(self.isend(peer, tag, buf))

    def recv(self, peer: int, tag: int, buf: np.ndarray) -> None:
        self.wait(self.irecv(peer, tag, buf))

    # -- collectives -------------------------------------------------------------

    def allreduce(self, buf: np.ndarray, op: str | ReductionOp = "sum") -> Request:
        """Combine ``buf`` over all ranks in rank order 0..n-1; result lands in every ``buf``."""
        self._check_buffer(buf)
        return self._collective("allreduce", buf, reduction_op(op))

    def barrier(self) -> Request:
        return self._collective("barrier", None, None)

    def _collective(self, kind, buf, op) -> Request:
        w = self.world
        req = self._new(kind, buf=buf)
        length = 0 if buf is None else buf.size
        with w._lock:
            if w.aborted is not None:
                raise w.aborted
            w.progress += 1
            epoch = w._epochs[self.rank]
            w._epochs[self.rank] += 1
            req.tag = epoch
            coll = w._coll.get(epoch)
            if coll is None:
                coll = w._coll[epoch] = _Collective(kind, op, length, {})
                w._coll_requests[epoch] = []
            err = None
            if coll.kind != kind or coll.op != op or coll.length != length:
                err = ProtocolError(
                    f"collective #{epoch} mismatch: rank {self.rank} called {kind}"
                    f"({op.name if op else ''}, n={length}) but peers called "
                    f"{coll.kind}({coll.op.name if coll.op else ''}, n={coll.length})"
                )
            else:
                coll.parts[self.rank] = None if buf is None else buf.copy()
                w._coll_requests[epoch].append(req)
                done = []
                if len(coll.parts) == w.size:
                    if buf is not None:
                        acc = coll.parts[0].reshape(-1).copy()
                        for r in range(1, w.size):
                            acc = op.combine(acc, coll.parts[r].reshape(-1))
                        for r in w._coll_requests[epoch]:
                            np.copyto(r.buf.reshape(-1), acc, casting="same_kind")
                    done = w._coll_requests.pop(epoch)
                    del w._coll[epoch]
                    for r in done:
                        r.state = "complete"
        if err is not None:
            w.abort(err)
            raise err
        w._finish(done)
        return req

    # -- completion ----------------------------------------------------------------

    def wait(self, req: Request) -> None:
        """Block the calling thread until ``req`` completes."""
        if req.owner != self.rank:
            raise ProtocolError(f"rank {self.rank} waiting on a request owned by rank {req.owner}")
        w = self.world
        if not req.done:
            rt = current_runtime()
            if rt is not None:
                rt.emit_current("wait-begin")
            try:
                if w.baton is not None:
                    w.baton.wait_until(lambda: req.done or w.aborted is not None)
                else:
                    while not req._event.wait(w.poll_interval):
                        if w.aborted is not None:
                            break
            finally:
                if rt is not None:
                    rt.emit_current("wait-end")
            if not req.done:
                raise w.aborted
        if req.error is not None:
            raise req.error

    def waitall(self, reqs: Iterable[Request]) -> None:
        for r in reqs:
            self.wait(r)

    def ta_wait(self, reqs: Request | Sequence[Request]) -> None:
        """Bind requests to the running task without blocking the worker.

        The task's completion, and so the release of its dependencies, is
        deferred until every bound request finished.
        """
        if isinstance(reqs, Request):
            reqs = [reqs]
        rt, task = current_runtime(), current_task()
        if rt is None or task is None or task.is_root:
            raise ProtocolError("ta_wait must be called from inside a task")
        reqs = list(reqs)
        if not reqs:
            return
        for r in reqs:
            if r.owner != self.rank:
                raise ProtocolError(f"rank {self.rank} binding a request owned by rank {r.owner}")
        rt.defer_completion(task, len(reqs))
        for r in reqs:
            rt.emit_current("request-bound")
            w = self.world
            w.add_done_callback(r, lambda: rt.notify_request_done(task))


@dataclass
class RankContext:
    """What a rank body receives from :func:`spawn_ranks`."""

    rank: int
    size: int
    comm: Comm
    runtime: Runtime


def _watchdog(world: World, stop: threading.Event) -> None:
    last = world.progress
    since = time.monotonic()
    while not stop.wait(world.poll_interval):
        if world.progress != last:
            last = world.progress
            since = time.monotonic()
        elif time.monotonic() - since >= world.watchdog_timeout:
            err = DeadlockError(world.diagnostic())
            log.warning("watchdog: %s", err)
            world.abort(err)
            return


def spawn_ranks(
    n: int,
    body: Callable[[RankContext], object],
    *,
    workers: int = 1,
    seed: int = 0,
    policy: str = "fifo",
    deterministic: bool = False,
    tracer: Tracer | None = None,
    watchdog_timeout: float = 5.0,
    poll_interval: float = 0.01,
    log_message_sizes: bool = False,
    world_out: list | None = None,
) -> list:
    """Run ``body`` on ``n`` ranks, each with its own runtime of ``workers`` workers.

    Returns the per-rank results of ``body``.  Raises the first error of any
    rank; a watchdog abort surfaces as :class:`~hdot.errors.DeadlockError`.
    With ``deterministic=True`` all workers of all ranks are serialized under
    one seeded :class:`~hdot.serial.Baton`.
    """
    if n < 1:
        raise ValueError("need at least one rank")
    baton = Baton(seed, n * workers) if deterministic else None
    world = World(
        n,
        watchdog_timeout=watchdog_timeout,
        poll_interval=poll_interval,
        log_message_sizes=log_message_sizes,
        baton=baton,
    )
    if world_out is not None:
        world_out.append(world)
    for r in range(n):
        world.runtimes[r] = Runtime(
            workers, seed=seed, policy=policy, rank=r, tracer=tracer, baton=baton, on_progress=world.bump
        )
    results: list = [None] * n
    errors: list = [None] * n

    def rank_main(r: int) -> None:
        ctx = RankContext(r, n, world.comms[r], world.runtimes[r])
        try:
            results[r] = world.runtimes[r].run(lambda: body(ctx))
        except BaseException as exc:  # noqa: BLE001
            errors[r] = exc
            if not isinstance(exc, HdotError) or world.aborted is None:
                world.abort(exc)

    stop = threading.Event()
    dog = None
    if baton is None and watchdog_timeout:
        dog = threading.Thread(target=_watchdog, args=(world, stop), name="hdot-watchdog", daemon=True)
        dog.start()
    threads = [threading.Thread(target=rank_main, args=(r,), name=f"hdot-rank{r}", daemon=True) for r in range(n)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    stop.set()
    if dog is not None:
        dog.join()
    if world.aborted is not None:
        raise world.aborted
    for e in errors:
        if e is not None:
            raise e
    leftover = world.unmatched()
    if leftover:
        raise ProtocolError(f"{len(leftover)} message(s) never matched: {leftover[:5]!r}")
    return results
