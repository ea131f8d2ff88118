"""Oracle suites behind ``hdot verify`` and the deadlock demonstration program."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .comm import RankContext, spawn_ranks
from .decomp import DomainSpec, LocalGrid, faces, halo_slab, pack_halo, partition, recv_buffer, unpack_halo
from .errors import DeadlockError
from .regions import in_, out

log = logging.getLogger(__name__)


# -- deadlock demonstration ----------------------------------------------------------


def exchange_program(blocking: bool, rounds: int = 4, n: int = 8) -> Callable[[RankContext], list]:
    """Two ranks swap ``rounds`` messages, each through a receive task spawned before its send task.

    With ``blocking=True`` the tasks wait for their request inside the body,
    which occupies the worker; with one worker per rank both ranks sit in
    their first receive and the program hangs.  With ``blocking=False`` the
    tasks bind the request with ``ta_wait`` and the worker moves on to the
    send.  A consumer task per round reads the received data, so a premature
    dependency release would show up as a wrong result.
    """

    def body(ctx: RankContext) -> list:
        rt, comm = ctx.runtime, ctx.comm
        peer = 1 - ctx.rank
        sends = [rt.register_array(np.full(n, 100.0 * ctx.rank + t)) for t in range(rounds)]
        recvs = [rt.register_buffer(n) for _ in range(rounds)]
        sums = rt.register_buffer(rounds)
        for t in range(rounds):
            rbuf, sbuf = rt.data(recvs[t]), rt.data(sends[t])

            def recv_task(t=t, rbuf=rbuf):
                req = comm.irecv(peer, t, rbuf)
                comm.wait(req) if blocking else comm.ta_wait(req)

            def send_task(t=t, sbuf=sbuf):
                req = comm.isend(peer, t, sbuf)
                comm.wait(req) if blocking else comm.ta_wait(req)

            def consume(t=t, rbuf=rbuf):
                rt.data(sums)[t] = rbuf.sum()

            rt.spawn(recv_task, [out(rt.region(recvs[t]))], label=f"comm:recv:{t}")
            rt.spawn(send_task, [in_(rt.region(sends[t]))], label=f"comm:send:{t}")
            rt.spawn(consume, [in_(rt.region(recvs[t])), out(rt.region(sums, t, t + 1))],
                     label=f"compute:consume:{t}")
        rt.taskwait()
        return list(rt.data(sums))

    return body


def expected_exchange(rounds: int = 4, n: int = 8) -> list[list[float]]:
    return [[n * (100.0 * (1 - r) + t) for t in range(rounds)] for r in range(2)]


def run_exchange(blocking: bool, seed: int = 0, *, workers: int = 1, policy: str = "fifo",
                 deterministic: bool = False, watchdog_timeout: float = 1.0, rounds: int = 4) -> list:
    return spawn_ranks(2, exchange_program(blocking, rounds), workers=workers, seed=seed, policy=policy,
                       deterministic=deterministic, watchdog_timeout=watchdog_timeout)


# -- suites ---------------------------------------------------------------------------


@dataclass
class SuiteResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0


def suite_determinism(seeds: int = 10) -> SuiteResult:
    from .bench.heat2d import heat2d_run, initial_grid, reference_sweeps

    u0 = initial_grid(32, 32)
    ref = reference_sweeps(u0, 5)
    bad = []
    for workers in (1, 2, 4):
        for seed in range(seeds):
            r = heat2d_run("hdot", 5, (32, 32), 1, workers, 8, seed=seed, policy="random", u0=u0)
            if not np.array_equal(r.grid, ref):
                bad.append((workers, seed))
    runs = 3 * seeds
    if bad:
        return SuiteResult("determinism", False, f"{len(bad)}/{runs} runs differ from the serial sweep, e.g. {bad[0]}")
    return SuiteResult("determinism", True, f"{runs} seeded runs bit-identical to the serial sweep")


def suite_cg_dense(tol: float = 1e-10) -> SuiteResult:
    from .bench.hpccg import dense_solve, hpccg_solve

    ref = dense_solve(8, 8, 8)
    r = hpccg_solve("hdot", 8, 8, 8, 1, 150, tol, workers=2)
    s = r.state
    err = float(np.abs(s.x - ref).max())
    detail = f"iterations={s.iterations} residual={s.residual:.3e} max|x-x_dense|={err:.3e}"
    ok = s.converged and (tol > 1e-8 or err <= 1e-6)
    return SuiteResult("cg-dense", ok, detail)


def suite_deadlock(timeout: float = 0.5) -> SuiteResult:
    t0 = time.perf_counter()
    try:
        run_exchange(True, watchdog_timeout=timeout)
    except DeadlockError as exc:
        first = str(exc).splitlines()[0]
        return SuiteResult("deadlock", True, f"watchdog fired after {time.perf_counter() - t0:.2f}s: {first}")
    return SuiteResult("deadlock", False, "blocking waits inside tasks completed; the watchdog never fired")


def suite_ta_wait(seeds: int = 20, inject: bool = False) -> SuiteResult:
    expect = expected_exchange()
    for seed in range(seeds):
        try:
            got = run_exchange(inject, seed, policy="random", watchdog_timeout=0.5)
        except DeadlockError as exc:
            return SuiteResult("ta-wait", False, f"deadlock reported (seed {seed}): {str(exc).splitlines()[0]}")
        if got != expect:
            return SuiteResult("ta-wait", False, f"seed {seed}: received {got}, expected {expect}")
    return SuiteResult("ta-wait", True, f"{seeds} random-order runs completed with correct data")


def suite_pack_unpack(trials: int = 50, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        ndim = int(rng.integers(1, 4))
        halo = int(rng.integers(1, 3))
        ext = tuple(int(rng.integers(halo, 6)) for _ in range(ndim))
        dom = DomainSpec(ext, (1,) * ndim, halo=halo)
        src, dst = LocalGrid(dom), LocalGrid(dom)
        src.data[...] = rng.standard_normal(src.data.shape)
        for sub in partition(dom, int(rng.integers(1, ext[0] + 1))):
            for face in faces(ndim):
                back = face.opposite
                if not (sub.on_boundary(face) and sub.on_boundary(back)):
                    continue
                # Periodic exchange with itself: the layer inside ``face`` lands beyond the opposite face.
                buf = pack_halo(src, sub, face)
                landing = recv_buffer(dst, sub, back)
                landing.data[...] = buf.data
                unpack_halo(landing, dst, sub, back)
                sent = src.view(halo_slab(src, sub, face, ghost=False))
                got = dst.view(halo_slab(dst, sub, back, ghost=True))
                if not np.array_equal(sent, got):
                    return SuiteResult("pack-unpack", False, f"mismatch on face {tuple(face)} of extents {ext}")
    return SuiteResult("pack-unpack", True, f"{trials} random grids round-tripped on every boundary face")


SUITES = ("determinism", "cg-dense", "deadlock", "ta-wait", "pack-unpack")


def run_suites(names=SUITES, *, cg_tol: float = 1e-10, inject_deadlock: bool = False,
               seeds: int = 10) -> list[SuiteResult]:
    table = {
        "determinism": lambda: suite_determinism(seeds),
        "cg-dense": lambda: suite_cg_dense(cg_tol),
        "deadlock": suite_deadlock,
        "ta-wait": lambda: suite_ta_wait(seeds, inject_deadlock),
        "pack-unpack": suite_pack_unpack,
    }
    results = []
    for name in names:
        t0 = time.perf_counter()
        res = table[name]()
        res.seconds = time.perf_counter() - t0
        log.info("suite %s: %s", name, "pass" if res.ok else "FAIL")
        results.append(res)
    return results
