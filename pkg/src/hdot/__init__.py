"""Data-flow tasking over a simulated message-passing layer, with halo-exchange benchmarks.

The runtime orders tasks by the buffer regions they declare; ranks are
threads in one process that talk through :mod:`hdot.comm`.  Benchmarks live
in :mod:`hdot.bench`, trace analysis in :mod:`hdot.report`.
"""

from .comm import Comm, RankContext, Request, World, spawn_ranks
from .decomp import (
    DomainSpec,
    Face,
    LocalGrid,
    Subdomain,
    blocks,
    pack_halo,
    partition,
    recv_buffer,
    to_local,
    unpack_halo,
    validate_grainsize,
)
from .errors import (
    ContainmentError,
    DeadlockError,
    GrainsizeError,
    HdotError,
    ProtocolError,
    ReductionError,
    RuntimeClosedError,
    TaskError,
)
from .regions import Access, Mode, Region, in_, inout, out, reduction, weak_in, weak_inout, weak_out
from .runtime import Runtime, Task, TaskState, current_runtime, current_task, run, spawn, taskwait
from .trace import TraceEvent, Tracer, read_events, write_events

__version__ = "0.1.0"

__all__ = [
    "Access", "Comm", "ContainmentError", "DeadlockError", "DomainSpec", "Face", "GrainsizeError", "HdotError",
    "LocalGrid", "Mode", "ProtocolError", "RankContext", "ReductionError", "Region", "Request", "Runtime",
    "RuntimeClosedError", "Subdomain", "Task", "TaskError", "TaskState", "TraceEvent", "Tracer", "World",
    "blocks", "current_runtime", "current_task", "in_", "inout", "out", "pack_halo", "partition", "read_events",
    "recv_buffer", "reduction", "run", "spawn", "spawn_ranks", "taskwait", "to_local", "unpack_halo",
    "validate_grainsize", "weak_in", "weak_inout", "weak_out", "write_events",
]
