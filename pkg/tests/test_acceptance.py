"""Acceptance criteria, one test per criterion.

Each test records a single ``PASS``/``FAIL``/``SKIP`` line; the lines are
printed as they happen and again in the pytest terminal summary (see
``conftest.py``).  Run ``python tests/test_acceptance.py`` to get just the
lines without pytest.
"""

from __future__ import annotations

import os
import statistics
import sys
import time

import numpy as np
import pytest

from hdot.bench.heat2d import heat2d_run, initial_grid
from hdot.bench.hpccg import dense_matrix, dense_solve, ddot_local, hpccg_solve
from hdot.bench.kernels import warmup
from hdot.decomp import validate_grainsize
from hdot.errors import DeadlockError, GrainsizeError
from hdot.regions import in_, reduction
from hdot.runtime import Runtime, taskwait
from hdot.verify import expected_exchange, run_exchange

from graphgen import audit, run_random_program

pytestmark = pytest.mark.acceptance

RESULTS: list[str] = []


def record(name: str, ok: bool | None, detail: str) -> None:
    verdict = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    line = f"[{verdict}] {name}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)


def cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def test_determinism_oracle():
    # 64x64 with grainsize 16 and 16-column blocks: 4x4 = 16 blocks.
    u0 = initial_grid(64, 64)
    steps = 10
    t0 = time.perf_counter()
    ref = heat2d_run("hdot", steps, (64, 64), 1, 1, 16, block_cols=16, u0=u0).grid
    bad = []
    runs = 0
    for workers in (1, 2, 4, 8):
        for seed in range(100):
            g = heat2d_run("hdot", steps, (64, 64), 1, workers, 16, block_cols=16, u0=u0,
                           seed=seed, policy="random").grid
            runs += 1
            if not np.array_equal(g, ref):
                bad.append((workers, seed))
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 60
    record("determinism oracle", ok,
           f"{runs - len(bad)}/{runs} runs (100 seeds x workers 1,2,4,8) bit-identical to the 1-worker grid "
           f"in {elapsed:.1f}s (limit 60s)")
    assert not bad, f"grids differ for (workers, seed) {bad[:5]}"
    assert elapsed < 60


def test_cross_mode_equivalence():
    u0 = initial_grid(64, 64)
    a = heat2d_run("rank-only", 100, (64, 64), 2, 1, 16, u0=u0).grid
    b = heat2d_run("hdot", 100, (64, 64), 2, 4, 16, u0=u0, policy="random", seed=1).grid
    heat_ok = np.array_equal(a, b)
    ro = hpccg_solve("rank-only", 8, 8, 8, ranks=2, max_iter=50).state.rtrans_history
    hd = hpccg_solve("hdot", 8, 8, 8, ranks=2, max_iter=50, workers=4, policy="random", seed=1).state.rtrans_history
    rel = max(abs(x - y) / abs(x) for x, y in zip(ro, hd)) if len(ro) == len(hd) == 50 else float("inf")
    ok = heat_ok and rel <= 1e-12
    record("cross-mode equivalence", ok,
           f"Heat2D 2 ranks/100 steps bit-identical={heat_ok}; "
           f"HPCCG 50 iterations max relative rtrans difference {rel:.2e} (limit 1e-12)")
    assert heat_ok
    assert rel <= 1e-12


def test_cg_correctness():
    # The dense oracle is assembled and solved first, independently of the CSR generator.
    n = 8 * 8 * 8
    a = dense_matrix(8, 8, 8)
    rhs = np.random.default_rng(0).standard_normal(n)
    ref = dense_solve(8, 8, 8, rhs)
    ones_ref = np.linalg.solve(a, a @ np.ones(n))
    res = hpccg_solve("hdot", 8, 8, 8, max_iter=150, tol=1e-10, workers=2, rhs=rhs)
    err = float(np.abs(res.state.x - ref).max())
    ones = hpccg_solve("hdot", 8, 8, 8, max_iter=150, tol=1e-10, workers=2)
    err1 = float(np.abs(ones.state.x - 1.0).max())
    ok = res.state.converged and ones.state.converged and err <= 1e-6 and err1 <= 1e-6
    record("CG correctness", ok,
           f"8x8x8 max|x - x_dense|={err:.2e} in {res.state.iterations} iterations; "
           f"rhs=A*1 max|x - 1|={err1:.2e} (limit 1e-6); dense oracle max|x - 1|="
           f"{float(np.abs(ones_ref - 1).max()):.1e}")
    assert err <= 1e-6 and err1 <= 1e-6


def test_deadlock_demonstration():
    t0 = time.perf_counter()
    fired = False
    try:
        run_exchange(True, workers=1, watchdog_timeout=0.5)
    except DeadlockError:
        fired = True
    expect = expected_exchange()
    failures = []
    for seed in range(100):
        try:
            got = run_exchange(False, seed, workers=1, policy="random", watchdog_timeout=2.0)
        except DeadlockError as exc:
            failures.append((seed, "deadlock", str(exc).splitlines()[0]))
            continue
        if got != expect:
            failures.append((seed, "data", got))
    elapsed = time.perf_counter() - t0
    ok = fired and not failures and elapsed < 30
    record("deadlock demonstration", ok,
           f"blocking waits with 1 worker/rank triggered the watchdog={fired}; ta_wait version completed "
           f"{100 - len(failures)}/100 random seeds in {elapsed:.1f}s total (limit 30s)")
    assert fired
    assert not failures, failures[:3]
    assert elapsed < 30


def test_overlap_property():
    warmup()
    kw = dict(size=(512, 512), ranks=2, workers=2, grainsize=64, block_cols=128)
    heat2d_run("hdot", 2, **kw)
    walls = {"hdot": [], "forkjoin": []}
    idles = {"hdot": [], "forkjoin": []}
    for _ in range(5):
        for mode in ("forkjoin", "hdot"):
            r = heat2d_run(mode, 100, **kw)
            walls[mode].append(r.wall_s)
            idles[mode].append(r.idle_fraction)
    wh, wf = statistics.median(walls["hdot"]), statistics.median(walls["forkjoin"])
    ih, if_ = statistics.median(idles["hdot"]), statistics.median(idles["forkjoin"])
    ok = ih < if_ and wh <= 1.05 * wf
    detail = (f"512x512/2 ranks/100 steps, median of 5: idle hdot {ih:.3f} vs forkjoin {if_:.3f}; "
              f"wall hdot {wh:.3f}s vs forkjoin {wf:.3f}s (ratio {wh / wf:.2f}, limit 1.05)")
    n = cores()
    if n < 4:
        record("overlap property", None, f"precondition unmet: {n} core(s) < 4; measured {detail}")
        pytest.skip(f"needs a machine with at least 4 cores, found {n}")
    record("overlap property", ok, detail)
    assert ih < if_
    assert wh <= 1.05 * wf


def test_reduction_exactness():
    rt = Runtime(4, policy="random", seed=3)
    vals = [(i * 7919) % 1000 - 300 for i in range(1000)]

    def root():
        h = rt.register_buffer(1, dtype=np.int64)
        reg = rt.region(h)
        for v in vals:
            rt.spawn(lambda v=v: rt.reduction_slot(reg).__iadd__(v), [reduction(reg)])
        rt.spawn(lambda: None, [in_(reg)])
        taskwait()
        return int(rt.data(h)[0])

    seq = 0
    for v in vals:
        seq += v
    got = rt.run(root)
    int_ok = got == seq

    # Positive terms, so |sum| equals the sum of term magnitudes.
    rng = np.random.default_rng(4)
    n = 100_000
    v, w = rng.random(n), rng.random(n)
    seq_dot = 0.0
    for x, y in zip(v.tolist(), w.tolist()):
        seq_dot += x * y
    bound = n * np.finfo(float).eps * abs(seq_dot)
    worst = 0.0
    for seed in range(5):
        frt = Runtime(4, policy="random", seed=seed)

        def froot(frt=frt):
            h = frt.register_buffer(1)
            reg = frt.region(h)
            for lo in range(0, n, 4096):
                rows = (lo, min(lo + 4096, n))
                frt.spawn(lambda rows=rows: frt.reduction_slot(reg).__iadd__(ddot_local(v, w, rows)),
                          [reduction(reg)])
            taskwait()
            return float(frt.data(h)[0])

        worst = max(worst, abs(frt.run(froot) - seq_dot))
    fp_ok = worst <= bound
    ok = int_ok and fp_ok
    record("reduction exactness", ok,
           f"integer reduction over 1000 tasks = {got} (sequential {seq}); "
           f"ddot over {n} elements in 25 tasks, worst error {worst:.2e} <= n*eps*|sum| = {bound:.2e}")
    assert int_ok and fp_ok


def test_grainsize_validation():
    accepted = [g for g in range(1, 8) if validate_grainsize(g, 4, parallel=True)]
    raised = []
    for g in range(1, 8):
        try:
            heat2d_run("hdot", 1, (16, 16), 2, 1, g, halo=4)
        except GrainsizeError:
            raised.append(g)
    ok = accepted == [1, 2, 4] and raised == [3, 5, 6, 7]
    record("grainsize validation", ok,
           f"N_h=4 parallel exchange accepts {accepted} (expected [1, 2, 4]); heat2d rejects {raised} "
           f"(expected [3, 5, 6, 7])")
    assert accepted == [1, 2, 4]
    assert raised == [3, 5, 6, 7]


def test_graph_soundness_audit():
    t0 = time.perf_counter()
    bad = {}
    for seed in range(1000):
        spawned, events = run_random_program(seed)
        overlaps = audit(spawned, events)
        if overlaps:
            bad[seed] = overlaps
    record("graph soundness audit", not bad,
           f"{1000 - len(bad)}/1000 random nested graphs without overlapping conflicting strong accesses "
           f"({time.perf_counter() - t0:.1f}s)")
    assert not bad, dict(list(bad.items())[:3])


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for fn in tests:
        try:
            fn()
        except (AssertionError, pytest.skip.Exception):
            pass
    print("\n".join(RESULTS))
    sys.exit(0 if all(not line.startswith("[FAIL]") for line in RESULTS) else 1)
