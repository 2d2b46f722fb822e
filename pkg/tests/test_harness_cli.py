import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from farsim.cli import main
from farsim.config import load_config
from farsim.graphs import load_edge_list, reference_pagerank
from farsim.harness import RunSpec, UsageError, execute, execute_all, format_rows, make_spec, parse_sweep


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def triangle(tmp_path):
    p = tmp_path / "triangle.el"
    p.write_text("# u v\n0 1\n1 2\n2 0\n1 0\n2 1\n0 2\n")
    return str(p)


def test_run_pipe_bench_one_row(capsys):
    assert main(["run", "pipe-bench", "--variant", "cl", "--lines", "8", "--units", "300"]) == 0
    rows = rows_of(capsys.readouterr().out)
    assert len(rows) == 1
    assert float(rows[0]["throughput"]) > 600  # near the ring-size plateau


def test_run_pagerank_triangle_checksum(triangle, capsys):
    assert main(["run", "pagerank", "--variant", "cpu_mcc", "--graph", triangle, "--iters", "1"]) == 0
    row = rows_of(capsys.readouterr().out)[0]
    g = load_edge_list(triangle)
    assert np.allclose(reference_pagerank(g, 1), 1 / 3)
    # single-precision recomputation: contrib = score / outdeg, summed in edge order, then damped
    score = [np.float32(1 / 3)] * 3
    contrib = [np.float32(score[u] / np.float32(2)) for u in range(3)]
    acc = [np.float32(0)] * 3
    for u in range(3):
        for v in g.targets[g.offsets[u]:g.offsets[u + 1]]:
            acc[u] = np.float32(acc[u] + contrib[v])
    final = np.array([np.float32(0.15 / 3) + np.float32(0.85) * a for a in acc], dtype=np.float32)
    assert int(row["checksum"]) == int(final.view(np.uint32).astype(np.uint64).sum())


@pytest.mark.parametrize("argv", [
    ["run", "nosuch", "--variant", "cpu"],
    ["run", "bulk", "--variant", "gpu"],
    ["run", "bulk", "--variant", "cpu", "--bogus", "1"],
    ["run", "bulk", "--variant", "cpu", "--set", "mem.nosuch=1"],
    ["run", "bulk", "--variant", "cpu", "--op", "memmove"],
    ["run", "pagerank", "--variant", "cpu_local", "--graph", "/nonexistent.el"],
    ["report", "/nonexistent.csv", "--figure", "gups"],
])
def test_usage_errors_exit_2(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:  # argparse rejects unknown choices itself
        code = exc.code
    assert code == 2


def test_correctness_failure_exit_3(capsys):
    code = main(["run", "pipe-bench", "--variant", "cl", "--units", "2000", "--lines", "1",
                 "--set", "pipe.torn_write_fault=true"])
    assert code == 3
    assert "correctness" in capsys.readouterr().err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "farsim", "run", "bulk", "--variant", "cp", "--size", "4096"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert rows_of(out.stdout)[0]["workload"] == "bulk"


# -- specs --------------------------------------------------------------------------------

def test_spec_replay_bit_identical():
    spec = make_spec("gups", "mcc", {"table_bytes": 1 << 15, "updates": 3000}, seed=9)
    again = RunSpec.from_json(spec.canonical())
    assert again.hash == spec.hash
    assert format_rows(execute(spec)) == format_rows(execute(again))


def test_spec_hash_covers_every_field():
    base = make_spec("bulk", "cpu", {"size": 4096})
    others = [make_spec("bulk", "cp", {"size": 4096}), make_spec("bulk", "cpu", {"size": 8192}),
              make_spec("bulk", "cpu", {"size": 4096}, seed=2),
              make_spec("bulk", "cpu", {"size": 4096}, overrides={"cpu.mlp": 4})]
    assert len({base.hash, *(s.hash for s in others)}) == 5


def test_columns_fixed_order():
    rows = execute(make_spec("db-filter", "cpu", {"rows": 500}))
    assert list(rows[0])[:5] == ["spec_hash", "workload", "variant", "rows", "row_bytes"]
    assert list(rows[0])[-1] == "matches"


def test_make_spec_rejects():
    with pytest.raises(UsageError):
        make_spec("bulk", "cpu", {"nope": 1})
    with pytest.raises(UsageError):
        make_spec("bulk", "cpu", {"size": "big"})
    with pytest.raises(UsageError):
        make_spec("bulk", "cpu", overrides={"cpu.nope": 1})


def test_sweep_power_range_expansion():
    specs = parse_sweep(["workload = bulk", "variant = cpu, cp", "op = memset", "size = 2^7..2^24",
                         "set.cpu.mlp = 4   # trailing comment"])
    assert len(specs) == 2 * 18
    assert [s.variant for s in specs[:19]] == ["cpu"] * 18 + ["cp"]  # file order, first axis outermost
    assert [s.params["size"] for s in specs[:18]] == [1 << e for e in range(7, 25)]
    assert all(s.overrides == {"cpu.mlp": 4} for s in specs)


@pytest.mark.parametrize("lines", [["variant = cpu"], ["workload = bulk"], ["workload = bulk", "variant cpu"],
                                   ["workload = bulk", "variant = cpu", "set.nope = 1"]])
def test_sweep_errors(lines):
    with pytest.raises(UsageError):
        parse_sweep(lines)


def test_parallel_sweep_keeps_spec_order():
    specs = parse_sweep(["workload = bulk", "variant = cp, cpu", "size = 2^7..2^12"])
    assert format_rows(execute_all(specs, jobs=3)) == format_rows(execute_all(specs, jobs=1))


def test_sweep_cli(tmp_path, capsys):
    sweep = tmp_path / "bulk.sweep"
    sweep.write_text("workload = bulk\nvariant = cpu, cp\nop = memclr\nsize = 2^7..2^16\n")
    out = tmp_path / "bulk.csv"
    assert main(["sweep", str(sweep), "--jobs", "2", "--out", str(out)]) == 0
    rows = rows_of(out.read_text())
    assert len(rows) == 20
    cp = [float(r["throughput"]) for r in rows if r["variant"] == "cp"]
    cpu = [float(r["throughput"]) for r in rows if r["variant"] == "cpu"]
    assert cp[-1] > cpu[-1]


# -- config -------------------------------------------------------------------------------

def test_farsim_config_env(tmp_path, monkeypatch):
    cfg = tmp_path / "desk.cfg"
    cfg.write_text("cpu.mlp = 3\n")
    monkeypatch.setenv("FARSIM_CONFIG", str(cfg))
    assert load_config()["cpu.mlp"] == 3
    assert load_config(overrides={"cpu.mlp": 5})["cpu.mlp"] == 5


def test_env_config_reaches_spec(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "desk.cfg"
    cfg.write_text("cpu.mlp = 3\n")
    main(["run", "bulk", "--variant", "cpu", "--size", "4096"])
    plain = rows_of(capsys.readouterr().out)[0]["spec_hash"]
    monkeypatch.setenv("FARSIM_CONFIG", str(cfg))
    main(["run", "bulk", "--variant", "cpu", "--size", "4096"])
    assert rows_of(capsys.readouterr().out)[0]["spec_hash"] != plain


def test_calibrate_roundtrip(tmp_path, capsys):
    out = tmp_path / "cal.cfg"
    assert main(["calibrate", "--out", str(out)]) == 0
    assert "[off]" not in capsys.readouterr().err
    cfg = load_config(str(out))
    assert cfg.dumps() == out.read_text()
    # calibrating from the calibrated config is a fixed point
    again = tmp_path / "again.cfg"
    assert main(["calibrate", "--config", str(out), "--out", str(again)]) == 0
    assert again.read_text() == out.read_text()
