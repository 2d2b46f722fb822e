"""Anchor probes and the solver behind ``farsim calibrate``.

Each probe runs a tiny simulation on an otherwise idle system.  The solver
nudges the memory parameters until the probes land on the anchors:
MCC and CPU idle far-read latency, sustained copy-engine bandwidth and a
ceiling on CPU streaming bandwidth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from . import host as H
from . import mcc as M
from .config import Config
from .workloads.common import make_system, run_to_end

MCC_READ_NS = 238.0
CPU_READ_NS = 715.0
MCC_COPY_BW = 17.5e9
CPU_STREAM_BW = 9.1e9
COPY_TOL = 0.02
STREAM_TOL = 0.05
STREAM_BYTES = 4 << 20
EXACT_NS = 1e-6  # "exact" up to float rounding of the composed path


@dataclass
class Anchors:
    mcc_read_ns: float
    cpu_read_ns: float
    mcc_copy_bw: float
    cpu_stream_bw: float

    def checks(self) -> dict[str, bool]:
        return {
            "mcc_read_ns": math.isclose(self.mcc_read_ns, MCC_READ_NS, rel_tol=0, abs_tol=EXACT_NS),
            "cpu_read_ns": math.isclose(self.cpu_read_ns, CPU_READ_NS, rel_tol=0, abs_tol=EXACT_NS),
            "mcc_copy_bw": abs(self.mcc_copy_bw / MCC_COPY_BW - 1) <= COPY_TOL,
            "cpu_stream_bw": self.cpu_stream_bw <= CPU_STREAM_BW * (1 + STREAM_TOL),
        }

    @property
    def ok(self) -> bool:
        return all(self.checks().values())


def probe_mcc_read(cfg: Config) -> float:
    """Issue-to-completion time of one far-to-scratchpad line copy."""
    system = make_system(cfg)
    addr = system.mem.far.alloc(cfg["mem.line_bytes"])
    out = {}

    def cp(ctx):
        since = yield M.Stamp()
        t0 = yield M.Now()
        yield M.CopyStart(M.CopyCommand(M.FAR_TO_SPAD, addr, 0, notify=True))
        yield M.AwaitNotify()
        # the probe's own issue and notification costs are not memory latency
        cost = ctx.mcc.cost
        out["t"] = (yield M.Now()) - t0 - cost["copy_issue"] - cost["notify"]
        yield M.AwaitTs(0, "read", since)
        return 0

    system.mccs[0].run_cp(M.FunctionProgram(cp), at=0.0)
    run_to_end(system)
    return out["t"]


def probe_cpu_read(cfg: Config) -> float:
    """Latency of one demand load that misses the LLC."""
    system = make_system(cfg)
    addr = system.mem.far.alloc(cfg["mem.line_bytes"])
    out = {}

    def prog(ctx):
        t0 = yield H.Now()
        yield H.Load(addr, 8)
        out["t"] = (yield H.Now()) - t0

    system.host(prog)
    run_to_end(system)
    return out["t"]


def probe_mcc_copy_bw(cfg: Config, nbytes: int = STREAM_BYTES, chunk: int = 16, depth: int = 8) -> float:
    """Far-to-scratchpad streaming with ``depth`` chunk copies in flight."""
    system = make_system(cfg, mem__far_bytes=max(cfg["mem.far_bytes"], 2 * nbytes))
    line = cfg["mem.line_bytes"]
    base = system.mem.far.alloc(nbytes)
    out = {}

    def cp(ctx):
        t0 = yield M.Now()
        inflight = []
        for i, a in enumerate(range(base, base + nbytes, chunk * line)):
            slot = (i % depth) * chunk
            if len(inflight) == depth:
                yield M.AwaitTs(*inflight.pop(0))
            since = yield M.Stamp()
            yield M.CopyStart(M.CopyCommand(M.FAR_TO_SPAD, a, slot, line_count=chunk))
            inflight.append((range(slot, slot + chunk), "read", since))
        for w in inflight:
            yield M.AwaitTs(*w)
        out["t"] = (yield M.Now()) - t0
        return 0

    system.mccs[0].run_cp(M.FunctionProgram(cp), at=0.0)
    run_to_end(system)
    return nbytes / out["t"] * 1e9


def probe_cpu_stream_bw(cfg: Config, nbytes: int = STREAM_BYTES) -> float:
    """Sequential far reads with the hardware streamer running ahead."""
    system = make_system(cfg, mem__far_bytes=max(cfg["mem.far_bytes"], 2 * nbytes))
    line = cfg["mem.line_bytes"]
    base = system.mem.far.alloc(nbytes)
    out = {}

    def prog(ctx):
        t0 = yield H.Now()
        yield H.AccessBatch(range(base, base + nbytes, line), prefetch_ahead=cfg["cpu.prefetch_slots"])
        out["t"] = (yield H.Now()) - t0

    system.host(prog)
    run_to_end(system)
    return nbytes / out["t"] * 1e9


def measure(cfg: Optional[Config] = None) -> Anchors:
    cfg = cfg or Config()
    return Anchors(probe_mcc_read(cfg), probe_cpu_read(cfg), probe_mcc_copy_bw(cfg), probe_cpu_stream_bw(cfg))


def solve(cfg: Optional[Config] = None, rounds: int = 6) -> tuple[Config, Anchors]:
    """Fixed-point iteration on latencies and bandwidths; returns the solved config."""
    cfg = cfg or Config()
    for _ in range(rounds):
        a = measure(cfg)
        if a.ok:
            break
        changes = {
            "mem.internal_latency_ns": round(cfg["mem.internal_latency_ns"] + MCC_READ_NS - a.mcc_read_ns, 6),
            "mem.external_latency_ns": round(cfg["mem.external_latency_ns"] + CPU_READ_NS - a.cpu_read_ns, 6),
            "mem.internal_bw": round(cfg["mem.internal_bw"] * MCC_COPY_BW / a.mcc_copy_bw, -3),
        }
        if a.cpu_stream_bw > CPU_STREAM_BW:
            changes["mem.external_bw"] = round(cfg["mem.external_bw"] * CPU_STREAM_BW / a.cpu_stream_bw, -3)
        cfg = cfg.merged(changes)
    return cfg, measure(cfg)


def solve_pagerank_edge_cycles(cfg: Config, scale: int = 16, target: float = 2.65, seed: int = 1) -> float:
    """CPU cycles per edge that put cpu_far / cpu_local PageRank time at ``target``.

    cpu_far is latency bound and barely moves with the edge cost, while
    cpu_local is compute bound and linear in it, so two probes pin the line.
    """
    from .graphs import gen_kronecker
    from .workloads.pagerank import run_pagerank

    g = gen_kronecker(scale, 16, seed)
    far = run_pagerank(g, 1, "cpu_far", config=cfg, check=False).elapsed_ns
    lo, hi = cfg["wl.pr.cpu_edge_cycles"], cfg["wl.pr.cpu_edge_cycles"] * 1.25
    t_lo = run_pagerank(g, 1, "cpu_local", config=cfg.merged({"wl.pr.cpu_edge_cycles": lo}), check=False).elapsed_ns
    t_hi = run_pagerank(g, 1, "cpu_local", config=cfg.merged({"wl.pr.cpu_edge_cycles": hi}), check=False).elapsed_ns
    want = far / target
    return lo + (want - t_lo) * (hi - lo) / (t_hi - t_lo)
