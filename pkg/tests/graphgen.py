"""Random task programs and a trace audit for conflicting strong accesses."""

from __future__ import annotations

import random
import threading
import time

from hdot.regions import Access, Mode, Region, conflicts, in_, inout, out, reduction, weak_in, weak_inout, weak_out
from hdot.runtime import Runtime
from hdot.trace import Tracer

STRONG = (in_, out, inout, lambda r: reduction(r, "sum"))
WEAK = (weak_in, weak_out, weak_inout)


def _sub_region(rng: random.Random, reg: Region) -> Region:
    lo = rng.randrange(reg.lo, reg.hi)
    hi = rng.randrange(lo + 1, reg.hi + 1)
    return Region(reg.buf, lo, hi)


def _child_mode(rng: random.Random, parent: Access):
    # A child may only read through a read-only parent access.
    if parent.mode in (Mode.IN, Mode.WEAK_IN):
        return in_
    if parent.mode is Mode.REDUCTION:
        return lambda r: reduction(r, "sum")
    return rng.choice(STRONG)


def run_random_program(seed: int, workers: int | None = None, tasks: int | None = None):
    """Run one random nested program; return ``(spawned tasks, trace events)``.

    Root tasks take 1-3 random strong or weak accesses on up to three small
    buffers.  Tasks with a weak access spawn 1-3 children whose strong
    accesses lie inside the parent's regions.
    """
    rng = random.Random(seed)
    workers = workers or rng.randint(1, 4)
    ntasks = tasks or rng.randint(4, 24)
    nbuf = rng.randint(1, 3)
    tracer = Tracer()
    rt = Runtime(workers, seed=seed, policy=rng.choice(("fifo", "random")), tracer=tracer)
    spawned = []
    lock = threading.Lock()

    def body_for(accs, depth):
        plan = []
        if depth == 0:
            for _ in range(rng.randint(1, 3) if any(a.weak for a in accs) else 0):
                parent = rng.choice(accs)
                plan.append([_child_mode(rng, parent)(_sub_region(rng, parent.region))])

        def body():
            time.sleep(0)
            for i, child in enumerate(plan):
                t = rt.spawn(body_for(child, depth + 1), child, label=f"child{i}")
                with lock:
                    spawned.append(t)
            for acc in accs:
                if not acc.weak:
                    view = rt.view(acc.region)
                    if acc.mode is Mode.REDUCTION:
                        rt.reduction_slot(acc.region)[...] += 1
                    elif acc.mode.writes:
                        view += 1
                    else:
                        float(view.sum())
            time.sleep(0.0001)

        return body

    def root():
        bufs = [rt.register_buffer(rng.randint(4, 32)) for _ in range(nbuf)]
        for i in range(ntasks):
            accs = []
            for _ in range(rng.randint(1, 3)):
                buf = rng.choice(bufs)
                reg = _sub_region(rng, rt.region(buf))
                maker = rng.choice(WEAK) if rng.random() < 0.3 else rng.choice(STRONG)
                accs.append(maker(reg))
            t = rt.spawn(body_for(accs, 0), accs, label=f"task{i}")
            with lock:
                spawned.append(t)

    rt.run(root)
    return spawned, tracer.events()


def _ancestors(task):
    out_ = set()
    p = task.parent
    while p is not None:
        out_.add(p.id)
        p = p.parent
    return out_


def audit(spawned, events) -> list[tuple[str, str]]:
    """Pairs of tasks whose conflicting strong accesses overlapped in time."""
    start, end = {}, {}
    for e in events:
        if e.kind == "start":
            start[e.task] = e.ts
        elif e.kind == "body-done":
            end[e.task] = e.ts
    bad = []
    strong = [(t, [a for a in t.accesses if not a.weak]) for t in spawned]
    strong = [(t, accs) for t, accs in strong if accs]
    for i, (a, aa) in enumerate(strong):
        anc_a = _ancestors(a)
        for b, bb in strong[i + 1:]:
            if b.id in anc_a or a.id in _ancestors(b):
                continue
            if not any(x.region.overlaps(y.region) and conflicts(x.mode, x.op, y.mode, y.op) for x in aa for y in bb):
                continue
            if max(start[a.id], start[b.id]) < min(end[a.id], end[b.id]):
                bad.append((a.label, b.label))
    return bad
