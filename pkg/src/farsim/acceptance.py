"""The twelve acceptance checks, shared by ``farsim selftest`` and the test suite.

Every check returns a :class:`Criterion` with the measured figures, so a
failure shows what was observed rather than only that something broke.
Expensive runs shared between checks are memoised per process.
"""

from __future__ import annotations

import functools
import statistics
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import calibrate
from . import host as H
from . import mcc as M
from . import pipes as P
from .config import Config
from .graphs import from_edges, gen_clustered, gen_grid, gen_kronecker, gen_urand
from .harness import execute, make_spec
from .workloads import (CorrectnessError, TreeSpec, credit_termination, gen_tree, pipe_rtt, run_bulk, run_db_filter,
                        run_db_sum, run_gups, run_pagerank, run_pipe_bench, run_uts, selectivity_bounds)
from .workloads.common import make_system, run_to_end

KiB = 1 << 10
MiB = 1 << 20


@dataclass
class Criterion:
    number: int
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)

    def line(self) -> str:
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d}. {self.name}: {shown}"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


# -- 1 ------------------------------------------------------------------------------------

def c01_calibration() -> Criterion:
    cfg, a = calibrate.solve(Config())
    checks = a.checks()
    return Criterion(1, "calibration anchors", all(checks.values()), {
        "mcc_read_ns": a.mcc_read_ns, "cpu_read_ns": a.cpu_read_ns, "copy_GBps": a.mcc_copy_bw / 1e9,
        "cpu_stream_GBps": a.cpu_stream_bw / 1e9, "changed": sorted(cfg.non_defaults())})


# -- 2 ------------------------------------------------------------------------------------

def c02_pipes() -> Criterion:
    plateau = max(run_pipe_bench("cl", t, 500, lines=k).throughput for t in (1, 2, 4) for k in (8, 16))
    ceiling = max(run_pipe_bench("reg", t, 2000, regs=8).throughput for t in (1, 2, 3))
    single = run_pipe_bench("cl", 1, 500, lines=1).throughput
    cl_rtt, reg_rtt = pipe_rtt("cl"), pipe_rtt("reg")
    ratio = plateau / ceiling
    ok = 25 <= ratio <= 80 and 1185 <= cl_rtt <= 1975 and 900 <= reg_rtt <= 1500 and single < 0.15 * plateau
    return Criterion(2, "pipe microbenchmark", ok, {
        "plateau_MBps": plateau, "reg_ceiling_MBps": ceiling, "ratio": ratio, "cl_rtt_ns": cl_rtt,
        "reg_rtt_ns": reg_rtt, "single_line_frac": single / plateau})


# -- 3 ------------------------------------------------------------------------------------

BULK_SIZES = [1 << e for e in range(7, 15)]


def _first_overtake(op: str) -> int | None:
    wins = [run_bulk(op, s, "cp").throughput > run_bulk(op, s, "cpu").throughput for s in BULK_SIZES]
    for i, s in enumerate(BULK_SIZES):
        if all(wins[i:]):
            return s
    return None


def c03_bulk() -> Criterion:
    cross = {op: _first_overtake(op) for op in ("memclr", "memcpy_opt")}
    ratios = [run_bulk("memcpy_opt", s, "cp").throughput / run_bulk("memcpy", s, "cp").throughput
              for s in (64 * KiB, 256 * KiB)]
    run_bulk("memset", 4 * KiB, "cp")
    run_bulk("memset", 4 * KiB, "cpu")
    ok = all(c is not None and c <= 16 * KiB for c in cross.values()) and min(ratios) >= 1.3
    return Criterion(3, "bulk ops", ok, {"memclr_cross": cross["memclr"], "memcpy_opt_cross": cross["memcpy_opt"],
                                         "opt_over_memcpy_64K_256K": ratios})


# -- 4 ------------------------------------------------------------------------------------

def c04_gups() -> Criterion:
    llc = Config()["desk.gups.llc_bytes"]
    small = {v: run_gups(llc // 4, 20000, v) for v in ("cpu_local", "cpu_far", "mcc")}
    big = {v: run_gups(8 * llc, 20000, v) for v in ("cpu_local", "cpu_far", "mcc")}
    far_over_mcc = small["cpu_far"].throughput / small["mcc"].throughput
    local_over_mcc = big["cpu_local"].throughput / big["mcc"].throughput
    same = all(len({r.checksum for r in d.values()}) == 1 for d in (small, big))
    ok = far_over_mcc >= 5 and big["mcc"].throughput > big["cpu_far"].throughput and 2 <= local_over_mcc <= 5 and same
    return Criterion(4, "GUPS", ok, {"small_far_over_mcc": far_over_mcc, "big_local_over_mcc": local_over_mcc,
                                     "big_mcc_over_far": big["mcc"].throughput / big["cpu_far"].throughput,
                                     "checksums_equal": same})


# -- 5, 6 ---------------------------------------------------------------------------------

ROW_SIZES = (8, 16, 32, 64, 128)


def c05_db_sum() -> Criterion:
    mcc = [run_db_sum(8192, rb, "mcc").throughput for rb in ROW_SIZES]
    cpu128 = run_db_sum(8192, 128, "cpu").throughput
    mean = statistics.fmean(mcc)
    spread = max(abs(x / mean - 1) for x in mcc)
    exact = all(run_db_sum(n, 64, v).checksum == run_db_sum(n, 64, "cpu").checksum for n in (1, 3) for v in ("mcc",))
    ok = spread <= 0.10 and mcc[-1] >= 1.2 * cpu128 and exact
    return Criterion(5, "DB sum", ok, {"mcc_Mrows": mcc, "flat_dev": spread, "mcc_over_cpu_128": mcc[-1] / cpu128})


def c06_db_filter() -> Criterion:
    out, ok = {}, True
    for sel in (0.01, 0.1, 0.5, 0.9):
        lo, hi = selectivity_bounds(sel)
        r = {v: run_db_filter(8192, 128, lo, hi, v).throughput for v in ("cpu", "mcc_copy", "mcc_streamed")}
        out[f"sel{sel}"] = [r["cpu"], r["mcc_copy"], r["mcc_streamed"]]
        ok &= r["cpu"] > max(r["mcc_copy"], r["mcc_streamed"])
        if sel <= 0.5:
            ok &= r["mcc_streamed"] >= r["mcc_copy"]
    return Criterion(6, "DB filter (cpu, copy, streamed)", ok, out)


# -- 7 ------------------------------------------------------------------------------------

UTS_TREE = TreeSpec(4.0, 10, 5)


def c07_uts() -> Criterion:
    tree = gen_tree(UTS_TREE)
    single = run_uts(tree, "mcc_single")
    x4 = run_uts(tree, "mcc_x4")
    speedup = x4.throughput / single.throughput
    fuzz = [credit_termination(root=s % 4, seed=s) for s in range(1, 51)]
    conserved = all(f["conserved"] for f in fuzz)
    ok = (tree.n >= 10 ** 6 and speedup >= 2.0 and x4.extra["visit_spread"] <= 0.08
          and sum(x4.extra["visits"]) == tree.n and conserved)
    return Criterion(7, "UTS", ok, {"nodes": tree.n, "x4_over_single": speedup,
                                    "visit_spread": x4.extra["visit_spread"], "credit_fuzz_conserved": conserved})


# -- 8, 9, 10 -----------------------------------------------------------------------------

def pagerank_test_graphs() -> dict:
    return {
        "triangle": from_edges([0, 1, 2], [1, 2, 0], 3),
        "kron9": gen_kronecker(9, 8, 2),
        "grid": gen_grid(23, 17),
        "urand": gen_urand(600, 4800, 3),
        "clustered": gen_clustered(600, 4800, 0.8, 4),
    }


PR_CASES = (("cpu_local", "cl", 1, 1), ("cpu_far", "cl", 1, 1), ("cpu_far_pf", "cl", 2, 1), ("cpu_mcc", "cl", 1, 4),
            ("cpu_mcc", "cl", 2, 3), ("cpu_mcc", "reg", 2, 2))


def c08_pagerank_correctness() -> Criterion:
    worst, ok = 0.0, True
    for g in pagerank_test_graphs().values():
        sums = set()
        for v, pipe, nc, nm in PR_CASES:
            try:
                r = run_pagerank(g, 10, v, pipe, n_cpu=nc, n_mcc=nm)
            except CorrectnessError:
                ok = False
                continue
            worst = max(worst, r.extra["linf_error"])
            sums.add(r.checksum)
        ok &= len(sums) == 1
    return Criterion(8, "PageRank correctness", ok and worst <= 1e-6, {"max_linf": worst})


@functools.cache
def kron16():
    return gen_kronecker(16, 16, 1)


@functools.cache
def grid256():
    return gen_grid(256, 256)


@functools.cache
def pr_run(graph: str, variant: str, pipe: str = "cl", n_mcc: int = 4):
    g = kron16() if graph == "kron" else grid256()
    return run_pagerank(g, 1, variant, pipe, n_cpu=1, n_mcc=n_mcc, check=False)


def c09_pagerank_trends() -> Criterion:
    base, far = pr_run("kron", "cpu_far_pf"), pr_run("kron", "cpu_far")
    cl, reg = pr_run("kron", "cpu_mcc", "cl", 4), pr_run("kron", "cpu_mcc", "reg", 4)
    speedup = base.elapsed_ns / cl.elapsed_ns
    cl_reg = reg.elapsed_ns / cl.elapsed_ns
    link_cut = far.extra["contrib_link_bytes"] / cl.counters["link_bytes"]
    ddr_up = cl.counters["ddr_bytes"] / far.counters["ddr_bytes"]
    g_base, g_cl = pr_run("grid", "cpu_far_pf"), pr_run("grid", "cpu_mcc", "cl", 4)
    grid_link = g_cl.extra["link_bytes_per_edge"] / cl.extra["link_bytes_per_edge"]
    ok = (speedup >= 1.5 and cl_reg >= 4 and link_cut >= 3 and ddr_up > 1
          and g_cl.elapsed_ns > g_base.elapsed_ns and grid_link >= 3)
    return Criterion(9, "PageRank trends", ok, {
        "mcc4_speedup": speedup, "cl_over_reg": cl_reg, "contrib_link_over_mcc_link": link_cut,
        "ddr_ratio": ddr_up, "grid_mcc_over_pf": g_base.elapsed_ns / g_cl.elapsed_ns, "grid_link_ratio": grid_link})


def c10_scaling() -> Criterion:
    base = pr_run("kron", "cpu_far_pf").elapsed_ns
    s = [1.0] + [base / pr_run("kron", "cpu_mcc", "cl", k).elapsed_ns for k in (1, 2, 3, 4)]
    mono = all(b >= a for a, b in zip(s[1:], s[2:]))
    ok = mono and (s[4] - s[3]) < (s[2] - s[1]) and s[1] > 1.0
    return Criterion(10, "scaling grid", ok, {"speedup_k0..4": s})


# -- 11 -----------------------------------------------------------------------------------

def spawn_times(n: int, size: int, verify: bool, seed: int = 1) -> list[float]:
    system = make_system(Config({"sim.seed": seed}))
    times = []

    def prog(ctx):
        for _ in range(n):
            cp = M.FunctionProgram(lambda c: iter(()), binary_size=size, name="noop")
            times.append((yield from H.spawn(ctx, 0, cp, verify=verify)))
            yield H.AwaitCp(0)

    system.host(prog)
    run_to_end(system)
    return times


def c11_spawn() -> Criterion:
    t = spawn_times(50, 16 * KiB, True)
    mean, se = statistics.fmean(t), statistics.stdev(t) / len(t) ** 0.5
    faster = all(statistics.fmean(spawn_times(3, s, False)) < statistics.fmean(spawn_times(3, s, True))
                 for s in (1 * KiB, 4 * KiB, 16 * KiB, 32 * KiB))
    ok = abs(mean / 1e6 - 1) <= 0.2 and se < 0.04e6 and faster
    return Criterion(11, "spawn model", ok, {"mean_ms": mean / 1e6, "se_ms": se / 1e6, "unverified_faster": faster})


# -- 12 -----------------------------------------------------------------------------------

def pipe_fuzz(n_msgs: int, torn_rate: float, flagged: bool, seed: int = 7) -> dict:
    """Random-size bursts through one cache-line pipe; returns what arrived."""
    rng = np.random.default_rng(seed)
    words = rng.integers(0, 1 << 63, n_msgs, dtype=np.int64).tolist()
    cuts = np.cumsum(rng.integers(1, 40, n_msgs)).tolist()
    bursts, prev = [], 0
    for c in cuts:
        if c >= n_msgs:
            break
        bursts.append(words[prev:c])
        prev = c
    bursts.append(words[prev:])
    system = make_system()
    got, stats = [], {}

    def cp(ctx):
        rv = P.ClReceiver(0, 8, 8, flagged=flagged)
        yield from rv.open()
        while not rv.closed:
            ev = yield M.AwaitNotify()
            yield from rv.handle(ev, lambda ms: got.extend(int.from_bytes(m, "little") for m in ms))
        stats["ignored"] = rv.ignored
        return 0

    def host(ctx):
        snd = P.ClSender(0, 0, 8, 8, torn_rate=torn_rate, flagged=flagged, seed=seed)
        for b in bursts:
            yield from snd.send([w.to_bytes(8, "little") for w in b])
        yield from snd.close()
        stats["torn"] = snd.torn_injected

    system.mccs[0].run_cp(M.FunctionProgram(cp), at=0.0)
    system.host(host)
    error = None
    try:
        run_to_end(system)
    except P.TornMessageError as exc:
        error = exc
    return {"sent": words, "got": got, "error": error, **stats}


def fifo_fuzz(n_msgs: int, seed: int = 11) -> dict:
    """Random bursts between all MCC pairs; per-pair order and content checked by the caller."""
    rng = np.random.default_rng(seed)
    n = 4
    plan = {(a, b): [] for a in range(n) for b in range(n) if a != b}
    keys = list(plan)
    for i, k in enumerate(rng.integers(0, len(keys), n_msgs).tolist()):
        plan[keys[k]].append(i)
    system = make_system()
    recv = {k: [] for k in plan}

    def prog(ctx, me):
        outs = [(b, list(plan[(me, b)])) for b in range(n) if b != me]
        expect = sum(len(plan[(a, me)]) for a in range(n) if a != me)
        got = 0
        while got < expect or any(q for _, q in outs):
            for b, q in outs:
                burst = q[:int(rng.integers(1, 16))]
                for w in burst:
                    if not (yield M.FifoSend(b, w, block=False)):
                        break
                    q.pop(0)
            while (peer := (yield M.FifoPoll())) is not None:
                recv[(peer, me)].append((yield M.FifoRecv(peer)))
                got += 1
            if got < expect and not any(q for _, q in outs):
                peer = yield M.AwaitFifo()
                recv[(peer, me)].append((yield M.FifoRecv(peer)))
                got += 1
        return 0

    for i in range(n):
        system.mccs[i].run_cp(M.FunctionProgram(prog, i), at=0.0)
    run_to_end(system)
    return {"plan": plan, "recv": recv, "fifo_words": system.counters.fifo_words}


def c12_determinism() -> Criterion:
    specs = [make_spec("gups", "mcc", {"table_bytes": 1 << 16, "updates": 3000}),
             make_spec("pagerank", "cpu_mcc", {"graph": "kron:8:8", "iters": 2}),
             make_spec("uts", "mcc_x4", {"depth": 6}, seed=3),
             make_spec("db-filter", "mcc_streamed", {"rows": 2048, "selectivity": 0.3})]
    replay = all(execute(s) == execute(s) for s in specs)
    line_ops = []
    for op in ("memcpy", "memclr"):
        r = run_bulk(op, 64 * KiB, "cp")
        line_ops.append(r.counters["ddr_bytes"] == 128 * r.counters["far_line_ops"])
    g = run_gups(1 << 18, 5000, "cpu_far")
    line_ops.append(g.counters["ddr_bytes"] == 128 * g.counters["far_line_ops"])
    clean = pipe_fuzz(100_000, 0.0, True)
    torn_flagged = pipe_fuzz(100_000, 0.05, True)
    torn_raw = pipe_fuzz(100_000, 0.05, False)
    conserved = clean["got"] == clean["sent"] and torn_flagged["got"] == torn_flagged["sent"]
    detected = torn_flagged["ignored"] >= torn_flagged["torn"] > 0 and (
        torn_raw["error"] is not None or torn_raw["got"] != torn_raw["sent"])
    fifo = fifo_fuzz(100_000)
    fifo_ok = all(fifo["recv"][k] == v for k, v in fifo["plan"].items()) and fifo["fifo_words"] == 100_000
    ok = replay and all(line_ops) and conserved and detected and fifo_ok
    return Criterion(12, "determinism and conservation", ok, {
        "replay_identical": replay, "ddr_is_128x_line_ops": all(line_ops), "pipe_conserved": conserved,
        "torn_detected": detected, "torn_injected": torn_flagged["torn"], "fifo_conserved": fifo_ok})


CRITERIA: dict[int, Callable[[], Criterion]] = {
    1: c01_calibration, 2: c02_pipes, 3: c03_bulk, 4: c04_gups, 5: c05_db_sum, 6: c06_db_filter, 7: c07_uts,
    8: c08_pagerank_correctness, 9: c09_pagerank_trends, 10: c10_scaling, 11: c11_spawn, 12: c12_determinism,
}


def run_all(only=None, echo=print) -> list[Criterion]:
    out = []
    for n, fn in CRITERIA.items():
        if only and n not in only:
            continue
        c = fn()
        echo(c.line())
        out.append(c)
    return out
