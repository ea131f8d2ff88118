"""Heat2D: in-place Gauss-Seidel sweeps of a 2-D heat equation.

Each sweep sets ``U[i,j] = (U[i+1,j] + U[i-1,j] + U[i,j+1] + U[i,j-1]) / 4``
for every interior cell in row-major order.  Ranks own horizontal bands of
rows; inside a rank the band is tiled into blocks.  Visiting blocks in
lexicographic order (enforced by west/north dependencies) gives exactly the
point-by-point sweep, so all three modes produce bit-identical grids.

Halo traffic per sweep ``k`` for rank ``r``:

* rows from ``r-1`` after its sweep ``k`` (tag ``2k``), read by the top blocks;
* rows from ``r+1`` after its sweep ``k-1`` (tag ``2k+1``), read by the
  bottom blocks.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..comm import RankContext, spawn_ranks
from ..decomp import DomainSpec, Face, LocalGrid, blocks, pack_halo, rank_subdomain, recv_buffer, validate_grainsize
from ..errors import GrainsizeError
from ..regions import Region, in_, inout, out
from ..report import granularity_warnings, message_warnings, worker_times
from ..trace import Tracer
from . import MODES
from .kernels import gs_block

log = logging.getLogger(__name__)

TOP = Face(0, -1)
BOTTOM = Face(0, 1)


def initial_grid(ny: int, nx: int, boundary: float | None = None, interior: float = 0.0) -> np.ndarray:
    """``(ny+2, nx+2)`` array: interior cells plus a one-cell Dirichlet ring.

    The default ring is hot on top (1.0), cold at the bottom (0.0), with a
    linear ramp on the left edge and 0.25 on the right edge.
    """
    u = np.full((ny + 2, nx + 2), interior, dtype=np.float64)
    if boundary is None:
        u[0, :] = 1.0
        u[-1, :] = 0.0
        u[1:-1, 0] = np.linspace(1.0, 0.0, ny)
        u[1:-1, -1] = 0.25
    else:
        u[0, :] = u[-1, :] = boundary
        u[:, 0] = u[:, -1] = boundary
    return u


def reference_sweeps(u0: np.ndarray, steps: int) -> np.ndarray:
    """Sequential point-by-point sweeps in plain Python; the oracle for every mode."""
    u = [list(map(float, row)) for row in u0]
    ny, nx = len(u) - 2, len(u[0]) - 2
    for _ in range(steps):
        for i in range(1, ny + 1):
            up, row, down = u[i - 1], u[i], u[i + 1]
            for j in range(1, nx + 1):
                row[j] = (down[j] + up[j] + row[j + 1] + row[j - 1]) / 4.0
    return np.array(u)


@dataclass
class Heat2DResult:
    grid: np.ndarray
    mode: str
    steps: int
    updates: int
    wall_s: float
    events: list
    idle_fractions: dict
    warnings: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def updates_per_s(self) -> float:
        return self.updates / self.wall_s if self.wall_s > 0 else 0.0

    @property
    def idle_fraction(self) -> float:
        return float(np.mean(list(self.idle_fractions.values()))) if self.idle_fractions else 0.0

    def metric(self) -> dict:
        return {
            "updates": self.updates,
            "updates_per_s": self.updates_per_s,
            "giga_updates_per_s": self.updates_per_s / 1e9,
            "bench_wall_s": self.wall_s,
        }


class Heat2DRank:
    """Per-rank state: the banded grid, its blocks and the halo staging buffers."""

    def __init__(self, ctx: RankContext, u0: np.ndarray, grainsize: int, block_cols: int, halo: int):
        self.ctx = ctx
        self.rank, self.size = ctx.rank, ctx.size
        ny, nx = u0.shape[0] - 2, u0.shape[1] - 2
        self.nx = nx
        self.halo = halo
        self.domain = DomainSpec((ny, nx), (ctx.size, 1), halo=halo, coords=(ctx.rank, 0))
        self.grid = LocalGrid(self.domain)
        (lo, hi), _ = self.domain.rank_box()
        self.lo, self.hi = lo, hi
        # Interior plus the one-cell ring (boundary values or initial neighbour rows).
        self.grid.view(((lo - 1, hi + 1), (-1, nx + 1)))[...] = u0[lo:hi + 2, :]
        self.whole = rank_subdomain(self.domain, ctx.rank)
        self.blocks = blocks(self.domain, (grainsize, block_cols), ctx.rank)
        self.nbr, self.nbc = len(self.blocks), len(self.blocks[0])
        self.has_up = ctx.rank > 0
        self.has_down = ctx.rank < ctx.size - 1
        self._staging()

    def _staging(self):
        n = self.halo * self.nx
        self.stage_top = [np.zeros(n) for _ in range(2)]
        self.stage_bot = [np.zeros(n) for _ in range(2)]
        self.send_top = [recv_buffer(self.grid, self.whole, TOP) for _ in range(2)]
        self.send_bot = [recv_buffer(self.grid, self.whole, BOTTOM) for _ in range(2)]
        for b in self.send_top + self.send_bot:
            b.direction = "send"

    # -- helpers shared by all modes -----------------------------------------------

    def storage_bounds(self, sub):
        (r0, r1), (c0, c1) = sub.slab
        oy, ox = self.grid.offset
        return r0 - oy, r1 - oy, c0 - ox, c1 - ox

    def compute(self, sub) -> None:
        gs_block(self.grid.data, *self.storage_bounds(sub))

    def unpack_top(self, buf: np.ndarray, c0: int = 0, c1: int | None = None) -> None:
        c1 = self.nx if c1 is None else c1
        h = self.halo
        self.grid.view(((self.lo - h, self.lo), (c0, c1)))[...] = buf.reshape(h, self.nx)[:, c0:c1]

    def unpack_bot(self, buf: np.ndarray, c0: int = 0, c1: int | None = None) -> None:
        c1 = self.nx if c1 is None else c1
        h = self.halo
        self.grid.view(((self.hi, self.hi + h), (c0, c1)))[...] = buf.reshape(h, self.nx)[:, c0:c1]

    def pack(self, face: Face, k: int) -> np.ndarray:
        bufs = self.send_top if face == TOP else self.send_bot
        return pack_halo(self.grid, self.whole, face, bufs[k % 2]).data

    def block_rows_touching(self, rows: tuple[int, int]) -> list[int]:
        return [bi for bi, line in enumerate(self.blocks) if line[0].slab[0][0] < rows[1] and rows[0] < line[0].slab[0][1]]

    def interior(self) -> np.ndarray:
        return self.grid.interior().copy()

    # -- rank-only: one sequential sweep per rank, blocking exchange ---------------

    def step_rank_only(self, k: int, steps: int) -> None:
        comm = self.ctx.comm
        if self.has_down:
            comm.recv(self.rank + 1, 2 * k + 1, self.stage_bot[0])
            self.unpack_bot(self.stage_bot[0])
        if self.has_up:
            comm.recv(self.rank - 1, 2 * k, self.stage_top[0])
            self.unpack_top(self.stage_top[0])
        self.compute(self.whole)
        if self.has_down:
            comm.send(self.rank + 1, 2 * k, self.pack(BOTTOM, k))
        if self.has_up and k + 1 < steps:
            comm.send(self.rank - 1, 2 * (k + 1) + 1, self.pack(TOP, k + 1))

    def prologue_blocking(self, steps: int) -> None:
        if self.has_up and steps > 0:
            self.ctx.comm.send(self.rank - 1, 1, self.pack(TOP, 0))

    # -- fork-join: comm phase, barrier, wavefront of parallel diagonals -----------

    def step_forkjoin(self, k: int, steps: int) -> None:
        rt, comm = self.ctx.runtime, self.ctx.comm

        def recv_phase():
            if self.has_down:
                comm.recv(self.rank + 1, 2 * k + 1, self.stage_bot[0])
            if self.has_up:
                comm.recv(self.rank - 1, 2 * k, self.stage_top[0])

        if self.has_up or self.has_down:
            rt.spawn(recv_phase, label=f"comm:recv:{k}")
            rt.taskwait()
        if self.has_down:
            self.unpack_bot(self.stage_bot[0])
        if self.has_up:
            self.unpack_top(self.stage_top[0])
        for d in range(self.nbr + self.nbc - 1):
            for bi in range(max(0, d - self.nbc + 1), min(d, self.nbr - 1) + 1):
                sub = self.blocks[bi][d - bi]
                rt.spawn(lambda sub=sub: self.compute(sub), label=f"compute:b{bi}.{d - bi}:{k}")
            rt.taskwait()

        def send_phase():
            if self.has_down:
                comm.send(self.rank + 1, 2 * k, self.pack(BOTTOM, k))
            if self.has_up and k + 1 < steps:
                comm.send(self.rank - 1, 2 * (k + 1) + 1, self.pack(TOP, k + 1))

        if self.has_down or (self.has_up and k + 1 < steps):
            rt.spawn(send_phase, label=f"comm:send:{k}")
            rt.taskwait()

    # -- hdot: one task graph per sweep, no barriers --------------------------------

    def setup_hdot(self) -> None:
        rt = self.ctx.runtime
        self.tok = rt.register_buffer(self.nbr * self.nbc)
        reg = rt.register_array
        self.r_stage_top = [rt.region(reg(b)) for b in self.stage_top]
        self.r_stage_bot = [rt.region(reg(b)) for b in self.stage_bot]
        self.r_send_top = [rt.region(reg(b.data)) for b in self.send_top]
        self.r_send_bot = [rt.region(reg(b.data)) for b in self.send_bot]
        h = self.halo
        self.top_rows = self.block_rows_touching((self.lo, self.lo + h))
        self.bot_rows = self.block_rows_touching((self.hi - h, self.hi))
        # Block accesses only depend on the staging parity, so build them once.
        self.block_specs = []
        for slot in range(2):
            specs = []
            for bi in range(self.nbr):
                for bj in range(self.nbc):
                    acc = [inout(self.block_region(bi, bj))]
                    if bi > 0:
                        acc.append(in_(self.block_region(bi - 1, bj)))
                    if bj > 0:
                        acc.append(in_(self.block_region(bi, bj - 1)))
                    top = self.has_up and bi == 0
                    bot = self.has_down and bi == self.nbr - 1
                    if top:
                        acc.append(in_(self.r_stage_top[slot]))
                    if bot:
                        acc.append(in_(self.r_stage_bot[slot]))
                    specs.append((bi, bj, self.blocks[bi][bj], top, bot, tuple(acc)))
            self.block_specs.append(specs)

    def block_region(self, bi: int, bj: int) -> Region:
        i = bi * self.nbc + bj
        return Region(self.tok, i, i + 1)

    def _send_task(self, face: Face, k: int, peer: int, tag: int) -> None:
        """Pack task then a send task bound to its request with ta_wait."""
        rt, comm = self.ctx.runtime, self.ctx.comm
        rows = self.top_rows if face == TOP else self.bot_rows
        buf_regions = self.r_send_top if face == TOP else self.r_send_bot
        name = "top" if face == TOP else "bot"
        slot = k % 2
        deps = [in_(self.block_region(bi, bj)) for bi in rows for bj in range(self.nbc)]
        rt.spawn(lambda: self.pack(face, k), deps + [out(buf_regions[slot])], label=f"halo:pack_{name}:{k}")
        data = (self.send_top if face == TOP else self.send_bot)[slot].data

        def send():
            comm.ta_wait(comm.isend(peer, tag, data))

        rt.spawn(send, [in_(buf_regions[slot])], label=f"comm:send_{name}:{k}")

    def prologue_hdot(self, steps: int) -> None:
        if self.has_up and steps > 0:
            self._send_task(TOP, 0, self.rank - 1, 1)

    def step_hdot(self, k: int, steps: int) -> None:
        rt, comm = self.ctx.runtime, self.ctx.comm
        slot = k % 2
        if self.has_up:
            buf = self.stage_top[slot]
            rt.spawn(
                lambda: comm.ta_wait(comm.irecv(self.rank - 1, 2 * k, buf)),
                [out(self.r_stage_top[slot])],
                label=f"comm:recv_top:{k}",
            )
        if self.has_down:
            buf_b = self.stage_bot[slot]
            rt.spawn(
                lambda: comm.ta_wait(comm.irecv(self.rank + 1, 2 * k + 1, buf_b)),
                [out(self.r_stage_bot[slot])],
                label=f"comm:recv_bot:{k}",
            )
        for bi, bj, sub, top, bot, acc in self.block_specs[slot]:
            rt.spawn(self._block_body(sub, slot, top, bot), acc, label=f"compute:b{bi}.{bj}:{k}")
        if self.has_down:
            self._send_task(BOTTOM, k, self.rank + 1, 2 * k)
        if self.has_up and k + 1 < steps:
            self._send_task(TOP, k + 1, self.rank - 1, 2 * (k + 1) + 1)

    def _block_body(self, sub, slot, top, bot):
        (_, _), (c0, c1) = sub.slab

        def body():
            if top:
                self.unpack_top(self.stage_top[slot], c0, c1)
            if bot:
                self.unpack_bot(self.stage_bot[slot], c0, c1)
            self.compute(sub)

        return body


def heat2d_step_hdot(state: Heat2DRank, k: int, steps: int) -> None:
    """Spawn the task graph of sweep ``k`` on the calling rank (no waiting)."""
    state.step_hdot(k, steps)


def check_grainsize(grainsize: int, halo: int) -> None:
    # Ranks are stacked along the cut axis, so halo messages run parallel to the cuts.
    verdict = validate_grainsize(grainsize, halo, parallel=True)
    if not verdict:
        raise GrainsizeError(verdict.reason)


def heat2d_run(
    mode: str = "hdot",
    steps: int = 10,
    size: tuple[int, int] = (64, 64),
    ranks: int = 1,
    workers: int = 1,
    grainsize: int = 16,
    *,
    block_cols: int | None = None,
    halo: int = 1,
    seed: int = 0,
    policy: str = "fifo",
    deterministic: bool = False,
    u0: np.ndarray | None = None,
    watchdog_timeout: float = 5.0,
) -> Heat2DResult:
    """Run ``steps`` sweeps and return the final grid with timing metrics.

    ``size`` is ``(ny, nx)`` interior cells.  Rank-only mode uses one worker
    per rank whatever ``workers`` says.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    check_grainsize(grainsize, halo)
    ny, nx = size
    if u0 is None:
        u0 = initial_grid(ny, nx)
    if u0.shape != (ny + 2, nx + 2):
        raise ValueError(f"initial grid must have shape {(ny + 2, nx + 2)}")
    if ny % ranks:
        raise ValueError(f"{ny} rows do not split evenly over {ranks} ranks")
    if ny // ranks < halo:
        raise ValueError("every rank needs at least N_h rows")
    block_cols = block_cols or grainsize
    nworkers = 1 if mode == "rank-only" else workers
    tracer = Tracer()
    states: list[Heat2DRank | None] = [None] * ranks

    def body(ctx: RankContext):
        st = Heat2DRank(ctx, u0, grainsize, block_cols, halo)
        states[ctx.rank] = st
        if mode == "rank-only":
            st.prologue_blocking(steps)
            for k in range(steps):
                st.step_rank_only(k, steps)
        elif mode == "forkjoin":
            st.prologue_blocking(steps)
            for k in range(steps):
                st.step_forkjoin(k, steps)
        else:
            st.setup_hdot()
            st.prologue_hdot(steps)
            for k in range(steps):
                heat2d_step_hdot(st, k, steps)
        return None

    worlds: list = []
    t0 = time.perf_counter()
    spawn_ranks(
        ranks,
        body,
        workers=nworkers,
        seed=seed,
        policy=policy,
        deterministic=deterministic,
        tracer=tracer,
        watchdog_timeout=watchdog_timeout,
        log_message_sizes=True,
        world_out=worlds,
    )
    wall = time.perf_counter() - t0
    grid = u0.copy()
    for st in states:
        grid[st.lo + 1:st.hi + 1, 1:nx + 1] = st.interior()
    events = tracer.events()
    times = worker_times(events, (ranks, nworkers))
    warnings = message_warnings(worlds[0].message_sizes)
    if mode != "rank-only":
        warnings += granularity_warnings(states[0].nbr * states[0].nbc, nworkers)
    config = {
        "benchmark": "heat2d", "mode": mode, "steps": steps, "size": [ny, nx], "ranks": ranks,
        "workers": nworkers, "grainsize": grainsize, "block_cols": block_cols, "halo": halo,
        "seed": seed, "policy": policy, "deterministic": deterministic,
    }
    log.info("heat2d %s: %d steps in %.3fs", mode, steps, wall)
    return Heat2DResult(
        grid=grid,
        mode=mode,
        steps=steps,
        updates=ny * nx * steps,
        wall_s=wall,
        events=events,
        idle_fractions={(t.rank, t.worker): t.idle_fraction for t in times},
        warnings=warnings,
        config=config,
    )


__all__ = [
    "Heat2DRank", "Heat2DResult", "check_grainsize", "heat2d_run", "heat2d_step_hdot", "initial_grid",
    "reference_sweeps",
]
