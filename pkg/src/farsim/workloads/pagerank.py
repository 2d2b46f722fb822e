"""Pull-based PageRank over a CSR graph of in-neighbours.

Phase 1 turns scores into per-node contributions, phase 2 accumulates the
contributions of every node's in-neighbours, and in the offloaded variant
phase 3 applies damping on the CPU.  Scores are float32 and every variant
adds a node's contributions strictly in CSR order, so all variants produce
bit-identical scores.

In ``cpu_mcc`` the CPU walks the CSR arrays and ships ``(u, v...)`` records
to the MCC owning ``u``: score lines (32 nodes each) are dealt round-robin
over the MCCs, so every score line has a single writer.  The MCC keeps the
score line it is accumulating into in its scratchpad, fetches ``contrib[v]``
lines with the copy engine and overlaps one record's fetches with the
previous record's additions.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .. import host as H
from .. import mcc as M
from .. import pipes as P
from ..config import Config
from ..graphs import CsrGraph, reference_pagerank
from ..kernels import segment_sum_f32
from .common import CorrectnessError, make_system, report, run_to_end

VARIANTS = ("cpu_local", "cpu_far", "cpu_far_pf", "cpu_mcc")
DAMPING = 0.85
TOLERANCE = 1e-6
NODE_BLOCK = 256
PHASE_CHUNK = 512
NODES_PER_LINE = 32
END_U = 0xFFFF_FFFF
ITER_REG = 25
MAX_REGS = 25  # data registers 0..24; 25 reports iterations
HDR_BIT = 1 << 63
END_WORD = (1 << 64) - 1
FINAL_WORD = (1 << 64) - 2
PIPE_BASE = 128
SCORE_BASE = 200
CONTRIB_BUFS = (0, 32)


def owner(u: int, n_mcc: int) -> int:
    return (u // NODES_PER_LINE) % n_mcc


def _apply(sums: np.ndarray, n: int, damping: float) -> np.ndarray:
    base = np.float32((1.0 - damping) / n)
    return base + np.float32(damping) * sums.astype(np.float32)


def _lines(base: int, first: int, last: int, size: int, line: int) -> range:
    """Line addresses covering elements ``first..last-1`` of ``size`` bytes."""
    if last <= first:
        return range(0)
    a = base + first * size
    b = base + last * size
    return range(a - a % line, b, line)


def _core_ranges(n: int, n_cpu: int) -> list[tuple[int, int]]:
    groups = -(-n // NODES_PER_LINE)
    cuts = [groups * c // n_cpu * NODES_PER_LINE for c in range(n_cpu + 1)]
    return [(min(cuts[c], n), min(cuts[c + 1], n)) for c in range(n_cpu)]


def _record_words(u: int, vs: np.ndarray) -> list[int]:
    words = [HDR_BIT | (len(vs) << 32) | u]
    v = vs.astype(np.uint64)
    if len(v) % 2:
        v = np.append(v, np.uint64(0))
    words.extend((v[0::2] | (v[1::2] << np.uint64(32))).tolist())
    return words


def _pr_cp(ctx, n_cpu, pipe, k, regs_per_core, contrib_base, score_base, cfg):
    """Phase-2 accumulator on one MCC."""
    line = ctx.mcc.line_bytes
    f32 = np.frombuffer(ctx.mcc.spad, dtype=np.float32)
    per_line = line // 4
    edge_cycles = cfg["wl.pr.mcc_edge_cycles"]
    msg_cycles = cfg["wl.pr.mcc_msg_cycles"]
    cur = [None] * n_cpu  # score line index being accumulated, per core
    slot = [0] * n_cpu
    fill_since = [None] * n_cpu
    drain_since = [[None, None] for _ in range(n_cpu)]
    st = {"prev": None, "buf": 0, "iteration": 0, "ends": 0}

    def score_line(c):
        return SCORE_BASE + 2 * c + slot[c]

    def finish_prev():
        prev = st["prev"]
        if prev is None:
            return
        st["prev"] = None
        c, u, buf, vs, since = prev
        yield M.AwaitTs(range(buf, buf + len(vs)), "read", since)
        if fill_since[c] is not None:
            yield M.AwaitTs(score_line(c), "read", fill_since[c])
            fill_since[c] = None
        yield M.Compute(edge_cycles * len(vs))
        vals = f32[(buf + np.arange(len(vs))) * per_line + vs % per_line]
        idx = score_line(c) * per_line + u % per_line
        seq = np.concatenate((f32[idx:idx + 1], vals))
        f32[idx] = np.cumsum(seq, dtype=np.float32)[-1]

    def switch_line(c, sl):
        if cur[c] is not None:
            ws = yield M.Stamp()
            yield M.CopyStart(M.CopyCommand(M.SPAD_TO_FAR, score_base + cur[c] * line, score_line(c)))
            drain_since[c][slot[c]] = ws
            slot[c] ^= 1
        ds = drain_since[c][slot[c]]
        if ds is not None:
            yield M.AwaitTs(score_line(c), "write", ds)
            drain_since[c][slot[c]] = None
        rs = yield M.Stamp()
        yield M.CopyStart(M.CopyCommand(M.FAR_TO_SPAD, score_base + sl * line, score_line(c)))
        fill_since[c] = rs
        cur[c] = sl

    def process(c, u, vs):
        yield M.Compute(msg_cycles)
        sl = u // per_line
        if cur[c] != sl:
            if st["prev"] is not None and st["prev"][0] == c:
                yield from finish_prev()
            yield from switch_line(c, sl)
        for i in range(0, len(vs), P.RECORD_IDS):
            part = vs[i:i + P.RECORD_IDS].astype(np.int64)
            buf = CONTRIB_BUFS[st["buf"]]
            st["buf"] ^= 1
            since = yield M.Stamp()
            addrs = contrib_base + part * 4
            cmds = [M.CopyCommand(M.FAR_TO_SPAD, a - a % line, buf + j) for j, a in enumerate(addrs.tolist())]
            yield M.CopyStart(cmds, group=True)
            yield from finish_prev()
            st["prev"] = (c, u, buf, part, since)

    def end_of_iteration():
        st["ends"] += 1
        if st["ends"] < n_cpu:
            return
        st["ends"] = 0
        yield from finish_prev()
        ws = yield M.Stamp()
        written = []
        for c in range(n_cpu):
            if cur[c] is not None:
                yield M.CopyStart(M.CopyCommand(M.SPAD_TO_FAR, score_base + cur[c] * line, score_line(c)))
                written.append(score_line(c))
                cur[c] = None
            for s in (0, 1):
                ds = drain_since[c][s]
                if ds is not None:
                    yield M.AwaitTs(SCORE_BASE + 2 * c + s, "write", ds)
                    drain_since[c][s] = None
        if written:
            yield M.AwaitTs(written, "write", ws)
        st["iteration"] += 1
        yield M.IoRegWrite(ITER_REG, st["iteration"])

    if pipe == "cl":
        rvs = [P.ClReceiver(PIPE_BASE + c * k, k, 4, cfg["pipe.recv_cycles"], decoder=P.decode_record)
               for c in range(n_cpu)]
        for rv in rvs:
            yield from rv.open()
        closed = 0
        while closed < n_cpu:
            ev = yield M.AwaitNotify()
            c = (ev.line - PIPE_BASE) // k
            recs = yield from rvs[c].handle(ev, lambda _: None)
            for u, vs in recs:
                if u == END_U:
                    yield from end_of_iteration()
                else:
                    yield from process(c, u, vs)
            if rvs[c].closed:
                closed += 1
    else:
        rvs = [P.RegReceiver(range(c * regs_per_core, (c + 1) * regs_per_core), ordered=True)
               for c in range(n_cpu)]
        partial = [None] * n_cpu
        live = set(range(n_cpu))
        while live:
            mask = 0
            for c in live:
                mask |= 1 << rvs[c].regs[rvs[c].next]
            r = yield M.AwaitIoReg(mask)
            c = r // regs_per_core
            w = yield from rvs[c].take(r)
            if w == FINAL_WORD:
                live.discard(c)
            elif w == END_WORD:
                yield from end_of_iteration()
            elif w & HDR_BIT:
                partial[c] = (w & 0xFFFF_FFFF, (w >> 32) & 0x7FFF_FFFF, [])
            else:
                u, cnt, got = partial[c]
                got.append(w & 0xFFFF_FFFF)
                if len(got) < cnt:
                    got.append(w >> 32)
                if len(got) == cnt:
                    partial[c] = None
                    yield from process(c, u, np.array(got, dtype=np.uint32))
    return 0


def run_pagerank(graph: CsrGraph, iterations: int = 1, variant: str = "cpu_far_pf", pipe: str = "cl",
                 n_cpu: int = 1, n_mcc: int = 4, config: Optional[Config] = None, damping: float = DAMPING,
                 check: bool = True):
    if variant not in VARIANTS:
        raise ValueError(f"unknown pagerank variant {variant!r}")
    if pipe not in ("cl", "reg"):
        raise ValueError(f"unknown pipe {pipe!r}")
    if graph.n_nodes == 0:
        raise ValueError("graph has no nodes")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not 1 <= n_cpu <= 4:
        raise ValueError("n_cpu must be in 1..4")
    offload = variant == "cpu_mcc"
    if offload and not 1 <= n_mcc <= 4:
        raise ValueError("n_mcc must be in 1..4")
    cfg = config or Config()
    line = cfg["mem.line_bytes"]
    n, m = graph.n_nodes, graph.n_edges
    need = (((4 * (5 * n + m + 64) * 2) >> 20) + 2) << 20
    system = make_system(cfg, mem__llc_bytes=cfg["desk.pr.llc_bytes"],
                         mem__far_bytes=max(cfg["mem.far_bytes"], need),
                         mem__local_bytes=max(cfg["mem.local_bytes"], need),
                         cpu__cores=max(n_cpu, cfg["cpu.cores"]), mcc__count=max(n_mcc, cfg["mcc.count"]))
    backing = system.mem.local if variant == "cpu_local" else system.mem.far
    counters = system.counters

    def place(arr):
        nbytes = max(line, -(-arr.nbytes // line) * line)
        base = backing.alloc(nbytes)
        view = backing.view(base, arr.dtype, len(arr))
        view[:] = arr
        return base, view

    offsets = graph.offsets.astype(np.int64)
    off_base, _ = place(graph.offsets.astype(np.uint32))
    tgt_base, _ = place(graph.targets.astype(np.uint32))
    outdeg = graph.out_degree().astype(np.uint32)
    deg_base, _ = place(outdeg)
    score_base, score = place(np.full(n, 1.0 / n, dtype=np.float32))
    contrib_base, contrib = place(np.zeros(n, dtype=np.float32))
    deg_f = outdeg.astype(np.float32)
    has_out = outdeg > 0
    targets = graph.targets

    edge_c = cfg["wl.pr.cpu_edge_cycles"]
    node_c = cfg["wl.pr.cpu_node_cycles"]
    pf_dist = cfg["wl.pr.prefetch_distance"] if variant == "cpu_far_pf" else 0
    k = cfg["pipe.lines"]
    regs_per_core = min(cfg["pipe.regs"], MAX_REGS // n_cpu)
    ranges = _core_ranges(n, n_cpu)
    barrier = H.Barrier(n_cpu)
    marks = {"contrib_link": 0}
    phase_ns = {"phase1": 0.0, "phase2": 0.0, "phase3": 0.0}

    def timed(c, name, gen):
        t = yield H.Now()
        yield from gen
        if c == 0:
            phase_ns[name] += (yield H.Now()) - t

    def phase1(lo, hi):
        for a in range(lo, hi, PHASE_CHUNK):
            b = min(hi, a + PHASE_CHUNK)
            yield H.AccessBatch(list(_lines(score_base, a, b, 4, line)) + list(_lines(deg_base, a, b, 4, line)),
                                prefetch_ahead=16)
            yield H.AccessBatch(_lines(contrib_base, a, b, 4, line), write=True, posted=True)
            if offload:
                yield H.AccessBatch(_lines(score_base, a, b, 4, line), write=True, posted=True)
            yield H.Compute(node_c * (b - a))
            sel = has_out[a:b]
            contrib[a:b][sel] = score[a:b][sel] / deg_f[a:b][sel]
            if offload:
                score[a:b] = 0.0

    def csr_lines(a, b):
        return list(_lines(off_base, a, b + 1, 4, line)) + list(_lines(tgt_base, offsets[a], offsets[b], 4, line))

    def phase2_cpu(lo, hi):
        for a in range(lo, hi, NODE_BLOCK):
            b = min(hi, a + NODE_BLOCK)
            e0, e1 = offsets[a], offsets[b]
            yield H.AccessBatch(csr_lines(a, b), prefetch_ahead=16)
            if e1 > e0:
                addrs = (contrib_base + targets[e0:e1].astype(np.int64) * 4).tolist()
                before = counters.link_bytes
                yield H.AccessBatch(addrs, cycles_each=edge_c, prefetch_ahead=pf_dist, overlap=True)
                marks["contrib_link"] += counters.link_bytes - before
            yield H.AccessBatch(_lines(score_base, a, b, 4, line), write=True, posted=True)
            yield H.Compute(node_c * (b - a))
            score[a:b] = _apply(segment_sum_f32(offsets[a:b + 1], targets, contrib), n, damping)

    def phase2_offload(lo, hi, senders):
        msg_c = cfg["wl.pr.cpu_msg_cycles"]
        send_c = cfg["wl.pr.cpu_send_edge_cycles"]
        for a in range(lo, hi, NODE_BLOCK):
            b = min(hi, a + NODE_BLOCK)
            yield H.AccessBatch(csr_lines(a, b), prefetch_ahead=16)
            # marshal the block per MCC, then interleave so every MCC drains in parallel
            queues = [[] for _ in range(n_mcc)]
            for g in range(a, b, NODES_PER_LINE):
                h = min(b, g + NODES_PER_LINE)
                recs = [(u, targets[offsets[u]:offsets[u + 1]]) for u in range(g, h) if offsets[u + 1] > offsets[u]]
                q = queues[owner(g, n_mcc)]
                if pipe == "cl":
                    q.extend(P.pack_records(recs))
                else:
                    q.extend((len(vs), _record_words(u, vs)) for u, vs in recs)
            for i in range(max(map(len, queues))):
                for mi, q in enumerate(queues):
                    if i >= len(q):
                        continue
                    count, unit = q[i]
                    yield H.Compute(msg_c + send_c * count)
                    if pipe == "cl":
                        yield from senders[mi].send_lines([(count, unit)])
                    else:
                        yield from senders[mi].send(unit)
            yield H.Compute(node_c * (b - a))

    def phase3(lo, hi):
        if hi <= lo:
            return
        yield H.Invalidate(score_base + lo * 4, (hi - lo) * 4)
        for a in range(lo, hi, PHASE_CHUNK):
            b = min(hi, a + PHASE_CHUNK)
            yield H.AccessBatch(_lines(score_base, a, b, 4, line), prefetch_ahead=16)
            yield H.AccessBatch(_lines(score_base, a, b, 4, line), write=True, posted=True)
            yield H.Compute(node_c * (b - a))
            score[a:b] = _apply(score[a:b], n, damping)

    def core_prog(ctx, c):
        lo, hi = ranges[c]
        t0 = yield H.Now()
        senders = []
        if offload:
            for mi in range(n_mcc):
                if pipe == "cl":
                    senders.append(P.ClSender(mi, PIPE_BASE + c * k, k, 4, cfg["pipe.cpu_line_ns"]))
                else:
                    senders.append(P.RegSender(mi, range(c * regs_per_core, (c + 1) * regs_per_core)))
        for it in range(iterations):
            yield from timed(c, "phase1", phase1(lo, hi))
            if offload and hi > lo:
                yield H.Flush(contrib_base + lo * 4, (hi - lo) * 4)
                yield H.Flush(score_base + lo * 4, (hi - lo) * 4)
                yield H.Fence()
            yield from barrier.wait(ctx)
            if not offload:
                yield from timed(c, "phase2", phase2_cpu(lo, hi))
                yield from barrier.wait(ctx)
                continue
            yield from timed(c, "phase2", phase2_offload(lo, hi, senders))
            for snd in senders:
                if pipe == "cl":
                    yield from snd.send_lines([(0, END_U.to_bytes(4, "little"))])
                else:
                    yield from snd.send([END_WORD])
            if c == 0:
                for mi in range(n_mcc):
                    while (yield H.MmioRead(mi, ITER_REG)) < it + 1:
                        pass
            yield from barrier.wait(ctx)
            yield from timed(c, "phase3", phase3(lo, hi))
            yield from barrier.wait(ctx)
        for snd in senders:
            if pipe == "cl":
                yield from snd.close()
            else:
                yield from snd.send([FINAL_WORD])
        if c == 0:
            marks["t0"] = t0
            marks["end"] = yield H.Now()

    if offload:
        for mi in range(n_mcc):
            prog = M.FunctionProgram(_pr_cp, n_cpu, pipe, k, regs_per_core, contrib_base, score_base, cfg,
                                     name="pagerank")
            system.mccs[mi].run_cp(prog, at=0.0)
    for c in range(n_cpu):
        system.host(core_prog, c, core=c)
    run_to_end(system)

    final = np.array(score, dtype=np.float32)
    err = None
    if check:
        ref = reference_pagerank(graph, iterations, damping)
        err = float(np.max(np.abs(final.astype(np.float64) - ref)))
        if err > TOLERANCE:
            raise CorrectnessError(f"pagerank/{variant}: L-inf error {err:.3g} exceeds {TOLERANCE}")
    checksum = int(final.view(np.uint32).astype(np.uint64).sum())
    elapsed = marks["end"] - marks["t0"]
    snap = counters.snapshot()
    name = variant if not offload else f"cpu_mcc_{pipe}"
    params = {"nodes": n, "edges": m, "iterations": iterations, "n_cpu": n_cpu,
              "n_mcc": n_mcc if offload else 0}
    return report(system, "pagerank", name, params, elapsed, m * iterations / elapsed * 1e3, "Medges/s",
                  checksum, linf_error=err, scores=final, contrib_link_bytes=marks["contrib_link"], phase_ns=phase_ns,
                  link_bytes_per_edge=snap["link_bytes"] / max(1, m * iterations),
                  ddr_bytes_per_edge=snap["ddr_bytes"] / max(1, m * iterations))


def scaling_reports(graph: CsrGraph, cpu_cores=(1, 2, 3, 4), mccs=(0, 1, 2, 3, 4), iterations: int = 1,
                    config: Optional[Config] = None) -> dict:
    """``{(cores, mccs): report}``; zero MCCs runs ``cpu_far_pf``, the rest ``cpu_mcc`` over cl pipes."""
    out = {}
    for c in sorted(set(cpu_cores) | {1}):
        for k in sorted(set(mccs) | ({0} if c == 1 else set())):
            if k == 0:
                out[(c, k)] = run_pagerank(graph, iterations, "cpu_far_pf", n_cpu=c, config=config, check=False)
            else:
                out[(c, k)] = run_pagerank(graph, iterations, "cpu_mcc", "cl", n_cpu=c, n_mcc=k, config=config,
                                           check=False)
    return out


def scaling_grid(graph: CsrGraph, cpu_cores=(1, 2, 3, 4), mccs=(0, 1, 2, 3, 4), iterations: int = 1,
                 config: Optional[Config] = None) -> dict:
    """Speedup of every (cores, mccs) cell over one core without MCCs."""
    reps = scaling_reports(graph, cpu_cores, mccs, iterations, config)
    base = reps[(1, 0)].elapsed_ns
    return {key: base / r.elapsed_ns for key, r in reps.items()}
