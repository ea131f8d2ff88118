"""Command-line entry point: ``hdot bench``, ``hdot report`` and ``hdot verify``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .bench import MODES
from .errors import DeadlockError, GrainsizeError, HdotError
from .report import RunReport, build_report
from .trace import read_events, write_events

log = logging.getLogger("hdot")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_DEADLOCK = 3


def parse_size(text: str, ndim: int) -> tuple[int, ...]:
    """``"128x64"`` -> ``(128, 64)``; a single number is repeated ``ndim`` times."""
    try:
        parts = [int(p) for p in text.lower().split("x")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"size {text!r} is not of the form N or {'x'.join('N' * ndim)}") from None
    if len(parts) == 1:
        parts *= ndim
    if len(parts) != ndim or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"size {text!r} needs {ndim} positive extents")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdot", description="Task-based halo-exchange benchmarks and trace tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="run a benchmark and write its trace and report")
    bench.add_argument("benchmark", choices=("heat2d", "hpccg"))
    bench.add_argument("--mode", choices=MODES, default="hdot")
    bench.add_argument("--ranks", type=int, default=1)
    bench.add_argument("--workers", type=int, default=1, help="workers per rank (rank-only mode uses 1)")
    bench.add_argument("--grainsize", type=int, default=None,
                       help="subdomain extent along the cut axis (heat2d rows, hpccg z-planes)")
    bench.add_argument("--steps", "--iters", dest="steps", type=int, default=None,
                       help="heat2d sweeps or CG iterations")
    bench.add_argument("--size", default=None,
                       help="heat2d: NYxNX interior cells; hpccg: NXxNYxNZ cells per rank")
    bench.add_argument("--halo", type=int, default=1, help="heat2d halo width N_h")
    bench.add_argument("--block-cols", type=int, default=None, help="heat2d block width (default: grainsize)")
    bench.add_argument("--nest", type=int, default=2, help="hpccg spmv chunks per subdomain")
    bench.add_argument("--tol", type=float, default=0.0, help="hpccg residual tolerance; 0 runs all iterations")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--policy", choices=("fifo", "random"), default="fifo")
    bench.add_argument("--deterministic", action="store_true", help="serialize all workers under the seed")
    bench.add_argument("--watchdog", type=float, default=5.0, help="seconds without progress before aborting")
    bench.add_argument("--trace", default=None, help="write the JSON-lines trace here")
    bench.add_argument("--report", default=None, help="write the JSON report here")

    rep = sub.add_parser("report", help="recompute a report from a trace file")
    rep.add_argument("trace")
    rep.add_argument("--out", default=None, help="write the JSON report here instead of stdout")
    rep.add_argument("--svg", default=None, help="render a per-worker timeline")

    ver = sub.add_parser("verify", help="run the oracle suites and print a pass/fail table")
    ver.add_argument("--suite", action="append", default=None, help="run only this suite (repeatable)")
    ver.add_argument("--seeds", type=int, default=10)
    ver.add_argument("--cg-tol", type=float, default=1e-10, help="CG tolerance for the cg-dense suite")
    ver.add_argument("--inject-deadlock", action="store_true",
                     help="make the ta-wait suite block inside its tasks instead")
    return parser


def _run_bench(args) -> tuple[object, dict, tuple[int, int]]:
    from .bench.heat2d import heat2d_run
    from .bench.hpccg import hpccg_solve

    common = dict(seed=args.seed, policy=args.policy, deterministic=args.deterministic,
                  watchdog_timeout=args.watchdog)
    if args.benchmark == "heat2d":
        size = parse_size(args.size or "64x64", 2)
        res = heat2d_run(args.mode, 10 if args.steps is None else args.steps, size, args.ranks, args.workers,
                         16 if args.grainsize is None else args.grainsize, block_cols=args.block_cols,
                         halo=args.halo, **common)
    else:
        nx, ny, nz = parse_size(args.size or "8x8x8", 3)
        res = hpccg_solve(args.mode, nx, ny, nz, args.ranks, 150 if args.steps is None else args.steps, args.tol,
                          workers=args.workers, grainsize=2 if args.grainsize is None else args.grainsize,
                          nest=args.nest, **common)
    return res, res.metric(), (res.config["ranks"], res.config["workers"])


def cmd_bench(args) -> int:
    if args.ranks < 1 or args.workers < 1:
        print("hdot: --ranks and --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        res, metric, shape = _run_bench(args)
    except GrainsizeError as exc:
        print(f"hdot: invalid grainsize: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DeadlockError as exc:
        print(f"hdot: deadlock: {exc}", file=sys.stderr)
        return EXIT_DEADLOCK
    except (ValueError, argparse.ArgumentTypeError) as exc:
        print(f"hdot: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HdotError as exc:
        print(f"hdot: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report = build_report(res.events, config=res.config, metric=metric, warnings=res.warnings, workers=shape)
    if args.trace:
        write_events(args.trace, res.events)
    if args.report:
        report.write(args.report)
    _print_summary(report)
    return EXIT_OK


def _print_summary(report: RunReport) -> None:
    cfg = report.config
    print(f"{cfg.get('benchmark', 'trace')} {cfg.get('mode', '')}: wall {report.wall_s:.4f}s, "
          f"mean idle fraction {report.idle_fraction:.3f}, overlap witnesses {report.overlap_witnesses}")
    for key, value in sorted(report.metric.items()):
        print(f"  {key}: {value}")
    for w in report.warnings:
        print(f"  warning: {w}")


def cmd_report(args) -> int:
    try:
        events = read_events(args.trace)
    except (OSError, ValueError, KeyError) as exc:
        print(f"hdot: cannot read trace {args.trace}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report = build_report(events, config={"trace": args.trace})
    if args.out:
        report.write(args.out)
    else:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    if args.svg:
        from .timeline import render_timeline

        render_timeline(events, args.svg, title=args.trace)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES, run_suites

    names = args.suite or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        print(f"hdot: unknown suite(s) {unknown}; choose from {list(SUITES)}", file=sys.stderr)
        return EXIT_USAGE
    results = run_suites(names, cg_tol=args.cg_tol, inject_deadlock=args.inject_deadlock, seeds=args.seeds)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {'pass' if r.ok else 'FAIL'}  {r.seconds:6.2f}s  {r.detail}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_FAIL


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handler = {"bench": cmd_bench, "report": cmd_report, "verify": cmd_verify}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
