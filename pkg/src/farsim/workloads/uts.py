"""Unbalanced tree search over a tree stored in far memory.

Each node is a 16 B record ``(child_off u32, count u32, payload u64)``;
``child_off`` indexes a separate array of 32-bit child ids.  Node ids are
a random permutation of breadth-first order, so records are scattered.

The four-MCC variant hands child ids round-robin to itself and its peers
over the inter-MCC FIFOs as two-word messages ``(tag << 62 | id, credit)``
and detects termination with weighted credit: a worker holding work always
holds credit, gives away half of its pool with every message, and returns
its whole pool to the root when it runs out of work.  The root stops
everyone once all credit is back.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import host as H
from .. import mcc as M
from ..config import Config
from ..sim import RngStream
from .common import CorrectnessError, ProtocolError, make_system, report, run_to_end

VARIANTS = ("cpu_dfs_local", "cpu_dfs_far", "cpu_far_pf", "cpu_far_pf_x4", "mcc_single", "mcc_x4")
REC = 16
WORK, RETURN, STOP = 1, 2, 3
CREDIT = 1 << 62
ID_MASK = (1 << 62) - 1
KID_LINES = 4  # child-id lines per pipeline slot
MASK64 = (1 << 64) - 1
REC_DTYPE = np.dtype([("off", "<u4"), ("cnt", "<u4"), ("pay", "<u8")])


@dataclass(frozen=True)
class TreeSpec:
    """Geometric tree: child counts ~ Geometric with mean ``branching``, cut at ``depth``."""

    branching: float = 4.0
    depth: int = 10
    seed: int = 1
    max_nodes: int = 1 << 23


@dataclass
class Tree:
    spec: TreeSpec
    n: int
    root: int
    records: np.ndarray  # REC_DTYPE, indexed by node id
    children: np.ndarray  # uint32 ids

    @property
    def checksum(self) -> int:
        return int(self.records["pay"].sum(dtype=np.uint64))


def gen_tree(spec: TreeSpec) -> Tree:
    if spec.branching <= 0 or spec.depth < 0:
        raise ValueError("branching must be > 0 and depth >= 0")
    rng = RngStream(spec.seed, "uts/tree").numpy()
    p = 1.0 / (1.0 + spec.branching)
    counts = []
    width, total = 1, 1
    for _ in range(spec.depth):
        c = rng.geometric(p, width) - 1
        counts.append(c)
        width = int(c.sum())
        total += width
        if total > spec.max_nodes:
            raise ValueError(f"tree exceeds max_nodes={spec.max_nodes}")
        if width == 0:
            break
    counts.append(np.zeros(width, dtype=np.int64))
    cnt = np.concatenate(counts)[:total].astype(np.uint32)
    # in breadth-first order the children of node i are the contiguous block
    # starting at 1 + (number of children of nodes before i)
    off = np.zeros(total, dtype=np.int64)
    np.cumsum(cnt[:-1], out=off[1:])
    perm = rng.permutation(total).astype(np.uint32)
    recs = np.zeros(total, dtype=REC_DTYPE)
    recs["off"][perm] = off
    recs["cnt"][perm] = cnt
    recs["pay"][perm] = rng.integers(0, 1 << 63, total, dtype=np.int64).astype(np.uint64)
    return Tree(spec, total, int(perm[0]), recs, perm[1:].copy())


def _place(backing, tree: Tree, line: int):
    rec_bytes = tree.n * REC
    ch_bytes = max(4, tree.children.nbytes)
    rec_base = backing.alloc(-(-rec_bytes // line) * line)
    ch_base = backing.alloc(-(-ch_bytes // line) * line)
    backing.view(rec_base, np.uint8, rec_bytes)[:] = tree.records.view(np.uint8)
    if tree.children.nbytes:
        backing.view(ch_base, np.uint32, len(tree.children))[:] = tree.children
    return rec_base, ch_base


def _cpu_dfs(stack, recs, children, rec_base, ch_base, cycles, line, prefetch, tally):
    off_l, cnt_l, pay_l = recs
    visited, total = 0, 0
    while stack:
        u = stack.pop()
        yield H.Access(rec_base + u * REC)
        yield H.Compute(cycles)
        visited += 1
        total += pay_l[u]
        cnt = cnt_l[u]
        if cnt:
            c0 = ch_base + off_l[u] * 4
            first = c0 - c0 % line
            for la in range(first, c0 + cnt * 4, line):
                yield H.Access(la)
            kids = children[off_l[u]:off_l[u] + cnt]
            if prefetch:
                for k in kids:
                    yield H.Prefetch(rec_base + k * REC)
            stack.extend(kids)
    tally.append((visited, total))


class _CreditAudit:
    """Global view of credit for checking conservation after every transfer."""

    def __init__(self, workers: int, root: int):
        self.pools = [0] * workers
        self.pools[root] = CREDIT
        self.in_flight = 0
        self.returned = 0
        self.checks = 0
        self.denied = 0

    def check(self) -> None:
        self.checks += 1
        s = sum(self.pools) + self.in_flight + self.returned
        if s != CREDIT:
            raise ProtocolError(f"credit not conserved: {s} != {CREDIT}")


def _mcc_worker(ctx, rec_base, ch_base, cfg, n_workers, root, start, shared):
    me = ctx.index
    mcc = ctx.mcc
    line = mcc.line_bytes
    spad = mcc.spad
    depth = cfg["wl.uts.inflight"]
    node_cycles = cfg["wl.uts.mcc_node_cycles"]
    audit: Optional[_CreditAudit] = shared.get("audit")
    slot_lines = 1 + KID_LINES
    free = list(range(depth - 1, -1, -1))
    pipe = deque()
    stack = list(start)
    visited, total = 0, 0
    rr = me
    stopped = False
    pool = CREDIT if me == root else 0

    def fetch_rec(s, u):
        a = rec_base + u * REC
        ln = s * slot_lines
        since = yield M.ReadTs(ln, "read")
        yield M.CopyStart(M.CopyCommand(M.FAR_TO_SPAD, a - a % line, ln))
        pipe.append([s, u, 0, since, 0, 0])

    def fetch_kids(e, c0, remaining):
        first = c0 - c0 % line
        n_lines = min(KID_LINES, -(-(c0 + remaining * 4 - first) // line))
        ln = e[0] * slot_lines + 1
        since = yield M.ReadTs(ln + n_lines - 1, "read")
        yield M.CopyStart(M.CopyCommand(M.FAR_TO_SPAD, first, ln, n_lines))
        e[2], e[3], e[4], e[5] = n_lines, since, c0, remaining
        pipe.append(e)

    def on_message(peer):
        nonlocal pool, stopped
        w0 = yield M.FifoRecv(peer)
        w1 = yield M.FifoRecv(peer)
        tag = w0 >> 62
        if tag == WORK:
            stack.append(w0 & ID_MASK)
            pool += w1
            if audit:
                audit.in_flight -= w1
                audit.pools[me] = pool
                audit.check()
        elif tag == RETURN:
            if me != root:
                raise ProtocolError("credit returned to a non-root worker")
            if audit:
                audit.in_flight -= w1
                audit.returned += w1
                audit.check()
            shared["returned"] += w1
        elif tag == STOP:
            stopped = True
        else:
            raise ProtocolError(f"bad message tag {tag}")

    def dispatch(kids):
        nonlocal rr, pool
        for k in kids:
            target = rr
            rr = (rr + 1) % n_workers
            if target == me:
                stack.append(k)
                continue
            if pool < 2:
                stack.append(k)
                if audit:
                    audit.denied += 1
                continue
            # the books move before the send: the peer may take the credit
            # before this program resumes
            give = pool // 2
            pool -= give
            if audit:
                audit.pools[me] = pool
                audit.in_flight += give
                audit.check()
            ok = yield M.FifoSend(target, ((WORK << 62) | k, give), block=False)
            if not ok:
                pool += give
                if audit:
                    audit.pools[me] = pool
                    audit.in_flight -= give
                stack.append(k)

    while True:
        while free and stack:
            yield from fetch_rec(free.pop(), stack.pop())
        if n_workers > 1:
            peer = yield M.FifoPoll()
            while peer is not None:
                yield from on_message(peer)
                peer = yield M.FifoPoll()
            if stopped:
                break
            if stack and free:
                continue
        if not pipe:
            if n_workers == 1:
                break
            if pool:
                if me == root:
                    shared["returned"] += pool
                    if audit:
                        audit.returned += pool
                    pool = 0
                else:
                    give, pool = pool, 0
                    if audit:
                        audit.in_flight += give
                        audit.pools[me] = 0
                        audit.check()
                    yield M.FifoSend(root, (RETURN << 62, give))
                if audit:
                    audit.pools[me] = 0
                    audit.check()
            if me == root and shared["returned"] == CREDIT:
                shared["terminated_at"] = (yield M.Now())
                for p in range(n_workers):
                    if p != me:
                        yield M.FifoSend(p, (STOP << 62, 0))
                break
            yield from on_message((yield M.AwaitFifo()))
            if stopped:
                break
            continue
        e = pipe.popleft()
        s, u, phase, since = e[0], e[1], e[2], e[3]
        if phase == 0:
            yield M.AwaitTs(s * slot_lines, "read", since)
            a = rec_base + u * REC
            o = s * slot_lines * line + a % line
            off = int.from_bytes(spad[o:o + 4], "little")
            cnt = int.from_bytes(spad[o + 4:o + 8], "little")
            total += int.from_bytes(spad[o + 8:o + 16], "little")
            visited += 1
            yield M.Compute(node_cycles)
            if cnt:
                yield from fetch_kids(e, ch_base + off * 4, cnt)
            else:
                free.append(s)
        else:
            n_lines, c0, remaining = phase, e[4], e[5]
            ln = s * slot_lines + 1
            yield M.AwaitTs(ln + n_lines - 1, "read", since)
            o = ln * line + c0 % line
            take = min(remaining, (n_lines * line - c0 % line) // 4)
            kids = np.frombuffer(bytes(spad[o:o + take * 4]), dtype="<u4").tolist()
            yield from dispatch(kids)
            if remaining > take:
                yield from fetch_kids(e, c0 + take * 4, remaining - take)
            else:
                free.append(s)
    shared["visits"][me] = visited
    shared["totals"][me] = total
    shared["ends"][me] = yield M.Now()
    return 0


def run_uts(tree: Tree, variant: str, config: Optional[Config] = None, n_mcc: int = 4,
            root_mcc: int = 0, audit: bool = False):
    if variant not in VARIANTS:
        raise ValueError(f"unknown uts variant {variant!r}")
    cfg = config or Config()
    line = cfg["mem.line_bytes"]
    need = (((2 * (tree.n * REC + tree.children.nbytes)) >> 20) + 2) << 20
    cores = 4 if variant == "cpu_far_pf_x4" else 1
    workers = n_mcc if variant == "mcc_x4" else 1
    system = make_system(cfg, mem__llc_bytes=cfg["desk.uts.llc_bytes"],
                         mem__far_bytes=max(cfg["mem.far_bytes"], need),
                         mem__local_bytes=max(cfg["mem.local_bytes"], need),
                         cpu__cores=max(cores, cfg["cpu.cores"]), mcc__count=max(workers, cfg["mcc.count"]))
    backing = system.mem.local if variant == "cpu_dfs_local" else system.mem.far
    rec_base, ch_base = _place(backing, tree, line)
    recs_l = (tree.records["off"].tolist(), tree.records["cnt"].tolist(), tree.records["pay"].tolist())
    children = tree.children.tolist()
    marks = {}
    extra = {}

    if variant.startswith("cpu"):
        cycles = cfg["wl.uts.cpu_node_cycles"]
        pf = variant != "cpu_dfs_local" and variant != "cpu_dfs_far"
        tally = []
        ends = []
        if cores == 1:
            def host_prog(ctx):
                t0 = yield H.Now()
                yield from _cpu_dfs([tree.root], recs_l, children, rec_base, ch_base, cycles, line, pf, tally)
                marks["elapsed"] = (yield H.Now()) - t0
            system.host(host_prog)
        else:
            shares = [None] * cores
            waiting = []

            def host_prog(ctx, i):
                if i == 0:
                    t0 = yield H.Now()
                    marks["t0"] = t0
                    # expand breadth-first on core 0 until there is enough to share
                    frontier = deque([tree.root])
                    while frontier and len(frontier) < 16 * cores:
                        u = frontier.popleft()
                        sub = []
                        yield from _visit_one(u, recs_l, children, rec_base, ch_base, cycles, line, sub, tally)
                        frontier.extend(sub)
                    items = list(frontier)
                    for c in range(cores):
                        shares[c] = items[c::cores]
                    now = yield H.Now()
                    for core in waiting:
                        core.wake(None, at=now)
                else:
                    waiting.append(ctx.core.core)
                    yield H.WaitWake()
                yield from _cpu_dfs(list(reversed(shares[i])), recs_l, children, rec_base, ch_base, cycles,
                                    line, pf, tally)
                ends.append((yield H.Now()))

            for i in range(cores):
                system.host(host_prog, i, core=i)
        run_to_end(system)
        if cores > 1:
            marks["elapsed"] = max(ends) - marks["t0"]
        visited = sum(v for v, _ in tally)
        total = sum(t for _, t in tally) & MASK64
        extra["visits"] = [visited]
    else:
        shared = {"returned": 0, "visits": [0] * workers, "totals": [0] * workers, "ends": [0.0] * workers}
        if audit:
            shared["audit"] = _CreditAudit(workers, root_mcc)
        for i in range(workers):
            start = [tree.root] if i == root_mcc else []
            prog = M.FunctionProgram(_mcc_worker, rec_base, ch_base, cfg, workers, root_mcc, start, shared,
                                     name="uts")
            system.mccs[i].run_cp(prog, at=0.0)
        run_to_end(system)
        marks["elapsed"] = max(shared["ends"])
        visited = sum(shared["visits"])
        total = sum(shared["totals"]) & MASK64
        extra["visits"] = list(shared["visits"])
        if workers > 1:
            extra["terminated_at"] = shared["terminated_at"]
            extra["credit_returned"] = shared["returned"]
            if audit:
                extra["credit_checks"] = shared["audit"].checks
                extra["credit_denied"] = shared["audit"].denied
    if visited != tree.n:
        raise CorrectnessError(f"uts/{variant}: visited {visited} of {tree.n} nodes")
    if total != tree.checksum & MASK64:
        raise CorrectnessError(f"uts/{variant}: payload checksum differs")
    v = np.array(extra["visits"], dtype=float)
    extra["visit_spread"] = float(np.max(np.abs(v - v.mean())) / v.mean()) if v.mean() else 0.0
    el = marks["elapsed"]
    params = {"branching": tree.spec.branching, "depth": tree.spec.depth, "seed": tree.spec.seed, "nodes": tree.n}
    return report(system, "uts", variant, params, el, tree.n / el * 1e3, "Mnodes/s", total, **extra)


def _visit_one(u, recs, children, rec_base, ch_base, cycles, line, out, tally):
    off_l, cnt_l, pay_l = recs
    yield H.Access(rec_base + u * REC)
    yield H.Compute(cycles)
    cnt = cnt_l[u]
    if cnt:
        c0 = ch_base + off_l[u] * 4
        for la in range(c0 - c0 % line, c0 + cnt * 4, line):
            yield H.Access(la)
        out.extend(children[off_l[u]:off_l[u] + cnt])
    tally.append((1, pay_l[u]))


def credit_termination(root: int = 0, workers: int = 4, seed: int = 1, config: Optional[Config] = None,
                       spec: Optional[TreeSpec] = None) -> dict:
    """Run the credit protocol on a small random tree; returns termination time and audit figures."""
    if not 0 <= root < workers:
        raise ValueError("root must be one of the workers")
    spec = spec or TreeSpec(branching=4.0, depth=5, seed=seed)
    tree = gen_tree(spec)
    rep = run_uts(tree, "mcc_x4", config, n_mcc=workers, root_mcc=root, audit=True)
    return {
        "termination_ns": rep.extra["terminated_at"],
        "credit_returned": rep.extra["credit_returned"],
        "conserved": rep.extra["credit_returned"] == CREDIT,
        "checks": rep.extra["credit_checks"],
        "nodes": tree.n,
        "visits": rep.extra["visits"],
    }
