import json

import pytest

from hdot import cli
from hdot.cli import EXIT_DEADLOCK, EXIT_FAIL, EXIT_OK, EXIT_USAGE, main, parse_size
from hdot.errors import DeadlockError
from hdot.trace import per_worker_sequences, read_events


def test_parse_size():
    assert parse_size("64x32", 2) == (64, 32)
    assert parse_size("8", 3) == (8, 8, 8)
    with pytest.raises(Exception):
        parse_size("4x4", 3)


def test_bench_heat2d_writes_trace_and_report(tmp_path, capsys):
    trace, report = tmp_path / "t.jsonl", tmp_path / "r.json"
    code = main(["bench", "heat2d", "--ranks", "2", "--workers", "2", "--size", "32x32", "--grainsize", "4",
                 "--steps", "3", "--trace", str(trace), "--report", str(report)])
    assert code == EXIT_OK
    assert "overlap witnesses" in capsys.readouterr().out
    rep = json.loads(report.read_text())
    assert rep["config"]["benchmark"] == "heat2d" and rep["overlap_witnesses"] >= 1
    assert rep["events"] == len(read_events(trace))


def test_bench_hpccg_with_tolerance(capsys):
    assert main(["bench", "hpccg", "--size", "6x6x6", "--tol", "1e-8", "--workers", "2"]) == EXIT_OK
    assert "converged: True" in capsys.readouterr().out


def test_invalid_grainsize_exits_with_usage_code(capsys):
    code = main(["bench", "heat2d", "--grainsize", "3", "--halo", "4", "--size", "16x16", "--steps", "1"])
    assert code == EXIT_USAGE
    assert "invalid grainsize" in capsys.readouterr().err


def test_bad_arguments_exit_with_usage_code():
    assert main(["bench", "heat2d", "--workers", "0"]) == EXIT_USAGE
    assert main(["bench", "heat2d", "--size", "15x16", "--ranks", "2", "--grainsize", "1"]) == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(["bench", "nbody"])
    assert info.value.code == 2


def test_deadlock_exits_with_its_own_code(monkeypatch, capsys):
    def hang(*args, **kwargs):
        raise DeadlockError("no progress for 0.1s")

    monkeypatch.setattr("hdot.bench.heat2d.heat2d_run", hang)
    assert main(["bench", "heat2d", "--steps", "1"]) == EXIT_DEADLOCK
    assert "deadlock" in capsys.readouterr().err


def test_same_seed_deterministic_runs_give_identical_worker_sequences(tmp_path):
    paths = []
    for i in range(2):
        p = tmp_path / f"t{i}.jsonl"
        argv = ["bench", "heat2d", "--ranks", "2", "--workers", "3", "--size", "16x16", "--grainsize", "4",
                "--steps", "2", "--deterministic", "--seed", "11", "--policy", "random", "--trace", str(p)]
        assert main(argv) == EXIT_OK
        paths.append(p)
    a, b = (per_worker_sequences(read_events(p)) for p in paths)
    assert a == b


def test_report_command(tmp_path, capsys):
    trace = tmp_path / "t.jsonl"
    main(["bench", "heat2d", "--size", "16x16", "--grainsize", "4", "--steps", "1", "--trace", str(trace)])
    capsys.readouterr()
    assert main(["report", str(trace)]) == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    out, svg = tmp_path / "r.json", tmp_path / "t.svg"
    assert main(["report", str(trace), "--out", str(out), "--svg", str(svg)]) == EXIT_OK
    assert json.loads(out.read_text()) == printed
    assert svg.exists()
    assert main(["report", str(tmp_path / "missing.jsonl")]) == EXIT_FAIL


def test_verify_command(capsys):
    assert main(["verify", "--suite", "pack-unpack", "--suite", "deadlock"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "pack-unpack" in out and "deadlock" in out and "FAIL" not in out
    assert main(["verify", "--suite", "nope"]) == EXIT_USAGE


def test_verify_inject_deadlock_fails(capsys):
    assert main(["verify", "--suite", "ta-wait", "--seeds", "1", "--inject-deadlock"]) == EXIT_FAIL
    assert "deadlock reported" in capsys.readouterr().out


def test_module_entry_point_is_wired():
    assert cli.build_parser().prog
