"""Table scans: sum of the balance column, and a range filter on it.

Rows hold a 32-bit id, a 32-bit balance and padding up to ``row_bytes``.
Balances are uniform over 32 bits.  Channel programs are invoked with
their arguments written to I/O registers and report back the same way.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .. import host as H
from .. import mcc as M
from .. import pipes as P
from ..config import Config
from ..sim import RngStream
from .common import CorrectnessError, make_system, report, run_to_end

ROW_SIZES = (8, 16, 32, 64, 128)
RESULT_REG, RESULT_HI_REG, DONE_REG = 20, 21, 22
ARG_REGS = (0, 1, 2, 3)
LINE_BATCH = 256
STREAM_BASE = 128
STREAM_K = 8


def make_table(rows: int, row_bytes: int, seed: int) -> np.ndarray:
    if row_bytes not in ROW_SIZES:
        raise ValueError(f"row_bytes must be one of {ROW_SIZES}")
    rng = RngStream(seed, "db/table").numpy()
    table = np.zeros((rows, row_bytes), dtype=np.uint8)
    ids = np.arange(rows, dtype=np.uint32)
    bal = rng.integers(0, 1 << 32, rows, dtype=np.uint64).astype(np.uint32)
    table[:, 0:4] = ids.view(np.uint8).reshape(rows, 4)
    table[:, 4:8] = bal.view(np.uint8).reshape(rows, 4)
    if row_bytes > 8:
        table[:, 8:] = rng.integers(0, 256, (rows, row_bytes - 8), dtype=np.uint8)
    return table


def balances(table: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(table[:, 4:8]).view(np.uint32).ravel()


def selectivity_bounds(sel: float) -> tuple[int, int]:
    """Inclusive balance range selecting a fraction ``sel`` of uniform 32-bit values."""
    if not 0.0 <= sel <= 1.0:
        raise ValueError("selectivity must be in [0, 1]")
    width = int(round(sel * (1 << 32)))
    return 0, width - 1


def _setup(rows, row_bytes, cfg, seed, **over):
    line = cfg["mem.line_bytes"]
    system = make_system(cfg, mem__llc_bytes=cfg["desk.db.llc_bytes"],
                         mem__far_bytes=max(cfg["mem.far_bytes"], 3 * rows * row_bytes + (1 << 20)), **over)
    table = make_table(rows, row_bytes, seed)
    nbytes = -(-rows * row_bytes // line) * line
    base = system.mem.far.alloc(nbytes)
    view = system.mem.far.view(base, np.uint8, rows * row_bytes)
    view[:] = table.ravel()
    return system, table, base, nbytes


def _cpu_scan(base, nbytes, rows_per_line, row_cycles, line):
    addrs = list(range(base, base + nbytes, line))
    for i in range(0, len(addrs), LINE_BATCH):
        yield H.AccessBatch(addrs[i:i + LINE_BATCH], prefetch_ahead=64,
                            cycles_each=rows_per_line * row_cycles)


def _host_invoke(args):
    """Pass arguments through I/O registers, then poll for the result."""
    snd = P.RegSender(0, ARG_REGS[:len(args)])
    yield from snd.send(args)
    while True:
        done = yield H.MmioRead(0, DONE_REG)
        if done:
            break
    lo = yield H.MmioRead(0, RESULT_REG)
    hi = yield H.MmioRead(0, RESULT_HI_REG)
    return lo | (hi << 64)


def _cp_args(n):
    rv = P.RegReceiver(ARG_REGS[:n])
    out = []
    for _ in range(n):
        out.append((yield from rv.recv()))
    return out


def _cp_reply(value: int):
    yield M.IoRegWrite(RESULT_REG, value & ((1 << 64) - 1))
    yield M.IoRegWrite(RESULT_HI_REG, value >> 64)
    yield M.IoRegWrite(DONE_REG, 1)


def _chunks(base, nbytes, chunk_lines, line):
    n_lines = nbytes // line
    return [(base + i * line, min(chunk_lines, n_lines - i)) for i in range(0, n_lines, chunk_lines)]


def run_db_sum(rows: int, row_bytes: int, variant: str, config: Optional[Config] = None, seed: int = 1):
    if variant not in ("cpu", "mcc"):
        raise ValueError(f"unknown db-sum variant {variant!r}")
    if rows < 1:
        raise ValueError("rows must be >= 1")
    cfg = config or Config()
    line = cfg["mem.line_bytes"]
    system, table, base, nbytes = _setup(rows, row_bytes, cfg, seed)
    expected = int(balances(table).astype(np.uint64).sum())
    rows_per_line = line // row_bytes
    marks = {}

    if variant == "cpu":
        def host_prog(ctx):
            t0 = yield H.Now()
            yield from _cpu_scan(base, nbytes, rows_per_line, cfg["wl.db.cpu_row_cycles"], line)
            marks["elapsed"] = (yield H.Now()) - t0
            marks["sum"] = expected  # functional result of the scanned rows
    else:
        chunk_lines = cfg["wl.db.chunk_lines"]
        row_cycles = cfg["wl.db.mcc_sum_row_cycles"]

        def cp(ctx):
            addr, n_rows = yield from _cp_args(2)
            spad = np.frombuffer(ctx.mcc.spad, dtype=np.uint8)
            total = 0
            nb = -(-n_rows * row_bytes // line) * line
            chunks = _chunks(addr, nb, chunk_lines, line)
            bufs = (0, chunk_lines)
            pending = {}

            def issue(k):
                buf = bufs[k % 2]
                rs = yield M.ReadTs(buf, "read")
                a, cnt = chunks[k]
                yield M.CopyStart(M.CopyCommand(M.FAR_TO_SPAD, a, buf, cnt))
                pending[k] = rs

            if chunks:
                yield from issue(0)
            for k, (a, cnt) in enumerate(chunks):
                if k + 1 < len(chunks):
                    yield from issue(k + 1)
                buf = bufs[k % 2]
                yield M.AwaitTs(buf, "read", pending.pop(k))
                first_row = (a - addr) // row_bytes
                n_here = min(cnt * line // row_bytes, n_rows - first_row)
                yield M.Compute(n_here * row_cycles)
                block = spad[buf * line:(buf * line + n_here * row_bytes)].reshape(n_here, row_bytes)
                total += int(np.ascontiguousarray(block[:, 4:8]).view(np.uint32).astype(np.uint64).sum())
            yield from _cp_reply(total)
            return 0

        def host_prog(ctx):
            t0 = yield H.Now()
            marks["sum"] = yield from _host_invoke([base, rows])
            marks["elapsed"] = (yield H.Now()) - t0

        system.mccs[0].run_cp(M.FunctionProgram(cp))
    system.host(host_prog)
    run_to_end(system)
    if marks["sum"] != expected:
        raise CorrectnessError(f"db-sum/{variant}: {marks['sum']} != {expected}")
    el = marks["elapsed"]
    return report(system, "db-sum", variant, {"rows": rows, "row_bytes": row_bytes}, el,
                  rows / el * 1e3, "Mrows/s", expected)


def run_db_filter(rows: int, row_bytes: int = 128, lo: int = 0, hi: int = (1 << 32) - 1,
                  variant: str = "cpu", config: Optional[Config] = None, seed: int = 1):
    if variant not in ("cpu", "mcc_copy", "mcc_streamed"):
        raise ValueError(f"unknown db-filter variant {variant!r}")
    cfg = config or Config()
    line = cfg["mem.line_bytes"]
    system, table, base, nbytes = _setup(rows, row_bytes, cfg, seed)
    bal = balances(table)
    match = (bal >= lo) & (bal <= hi)
    expected_ids = np.flatnonzero(match).astype(np.uint32)
    expected = int(len(expected_ids))
    rows_per_line = line // row_bytes
    marks = {}
    out_base = system.mem.far.alloc(max(line, nbytes))
    chunk_lines = cfg["wl.db.chunk_lines"]

    def filter_chunk(spad, buf, first_row, n_here):
        block = spad[buf * line:buf * line + n_here * row_bytes].reshape(n_here, row_bytes)
        b = np.ascontiguousarray(block[:, 4:8]).view(np.uint32).ravel()
        return np.flatnonzero((b >= lo) & (b <= hi)), block

    if variant == "cpu":
        def host_prog(ctx):
            t0 = yield H.Now()
            yield from _cpu_scan(base, nbytes, rows_per_line, cfg["wl.db.cpu_row_cycles"], line)
            marks["elapsed"] = (yield H.Now()) - t0
            marks["count"] = expected
        system.host(host_prog)
    elif variant == "mcc_copy":
        if row_bytes != line:
            raise ValueError("mcc_copy writes whole rows and needs row_bytes == line size")

        def cp(ctx):
            addr, n_rows, lo_, hi_ = yield from _cp_args(4)
            spad = np.frombuffer(ctx.mcc.spad, dtype=np.uint8)
            chunks = _chunks(addr, n_rows * row_bytes, chunk_lines, line)
            bufs = (0, chunk_lines)
            reads, writes = {}, {}
            out = 0

            def issue(k):
                buf = bufs[k % 2]
                if buf in writes:
                    # matches copied out of this buffer must land first
                    yield M.AwaitTs(buf + writes[buf][1], "write", writes.pop(buf)[0])
                rs = yield M.ReadTs(buf, "read")
                a, cnt = chunks[k]
                yield M.CopyStart(M.CopyCommand(M.FAR_TO_SPAD, a, buf, cnt))
                reads[k] = rs

            if chunks:
                yield from issue(0)
            for k, (a, cnt) in enumerate(chunks):
                if k + 1 < len(chunks):
                    yield from issue(k + 1)
                buf = bufs[k % 2]
                yield M.AwaitTs(buf, "read", reads.pop(k))
                yield M.Compute(cnt * cfg["wl.db.mcc_filter_row_cycles"])
                hits, _ = filter_chunk(spad, buf, 0, cnt)
                if len(hits):
                    yield M.Compute(len(hits) * cfg["wl.db.mcc_copy_match_cycles"])
                    # coalesce runs of adjacent matching rows into one command
                    runs = np.split(hits, np.flatnonzero(np.diff(hits) != 1) + 1)
                    cmds = []
                    for run in runs:
                        cmds.append(M.CopyCommand(M.SPAD_TO_FAR, out_base + out * line, buf + int(run[0]), len(run)))
                        out += len(run)
                    ws = yield M.ReadTs(buf + int(hits[-1]), "write")
                    yield M.CopyStart(cmds)
                    writes[buf] = (ws, int(hits[-1]))
            for buf, (ws, last) in writes.items():
                yield M.AwaitTs(buf + last, "write", ws)
            yield from _cp_reply(out)
            return 0

        def host_prog(ctx):
            t0 = yield H.Now()
            marks["count"] = yield from _host_invoke([base, rows, lo, hi])
            marks["elapsed"] = (yield H.Now()) - t0

        system.mccs[0].run_cp(M.FunctionProgram(cp))
        system.host(host_prog)
    else:
        got_ids = []

        def cp(ctx):
            tx = P.ClProducer(STREAM_BASE, STREAM_K, 8)
            yield from tx.open()
            addr, n_rows, lo_, hi_ = yield from _cp_args(4)
            spad = np.frombuffer(ctx.mcc.spad, dtype=np.uint8)

            def dispatch(ev):
                yield from tx.on_read(ev)

            chunks = _chunks(addr, -(-n_rows * row_bytes // line) * line, chunk_lines, line)
            bufs = (0, chunk_lines)
            reads = {}

            def issue(k):
                buf = bufs[k % 2]
                rs = yield M.ReadTs(buf, "read")
                a, cnt = chunks[k]
                yield M.CopyStart(M.CopyCommand(M.FAR_TO_SPAD, a, buf, cnt))
                reads[k] = rs

            if chunks:
                yield from issue(0)
            pend = []
            for k, (a, cnt) in enumerate(chunks):
                if k + 1 < len(chunks):
                    yield from issue(k + 1)
                buf = bufs[k % 2]
                yield M.AwaitTs(buf, "read", reads.pop(k))
                first_row = (a - addr) // row_bytes
                n_here = min(cnt * line // row_bytes, n_rows - first_row)
                yield M.Compute(n_here * cfg["wl.db.mcc_filter_row_cycles"])
                hits, block = filter_chunk(spad, buf, first_row, n_here)
                if len(hits):
                    yield M.Compute(len(hits) * cfg["wl.db.mcc_stream_match_cycles"])
                    pend.extend(bytes(block[h, 0:8]) for h in hits)
                per = P.PAYLOAD // 8
                while len(pend) >= per:
                    yield from tx.send(pend[:per], dispatch)
                    del pend[:per]
            if pend:
                yield from tx.send(pend, dispatch)
            yield from tx.close(dispatch)
            return 0

        def host_prog(ctx):
            t0 = yield H.Now()
            snd = P.RegSender(0, ARG_REGS)
            rx = P.ClConsumer(0, STREAM_BASE, STREAM_K, 8)
            yield from snd.send([base, rows, lo, hi])
            yield from rx.prime()
            while True:
                msgs = yield from rx.recv()
                if msgs is None:
                    break
                yield H.Compute(len(msgs) * cfg["wl.db.cpu_row_cycles"])
                got_ids.extend(int.from_bytes(m[:4], "little") for m in msgs)
            marks["elapsed"] = (yield H.Now()) - t0
            marks["count"] = len(got_ids)

        system.mccs[0].run_cp(M.FunctionProgram(cp))
        system.host(host_prog)
    run_to_end(system)
    if marks["count"] != expected:
        raise CorrectnessError(f"db-filter/{variant}: {marks['count']} matches, expected {expected}")
    if variant == "mcc_copy" and expected:
        out = system.mem.far.view(out_base, np.uint8, expected * row_bytes).reshape(expected, row_bytes)
        if not np.array_equal(out, table[match]):
            raise CorrectnessError("db-filter/mcc_copy: materialized rows differ")
    if variant == "mcc_streamed" and not np.array_equal(np.array(got_ids, dtype=np.uint32), expected_ids):
        raise CorrectnessError("db-filter/mcc_streamed: streamed ids differ")
    el = marks["elapsed"]
    sel = expected / rows if rows else 0.0
    return report(system, "db-filter", variant, {"rows": rows, "row_bytes": row_bytes, "lo": lo, "hi": hi},
                  el, rows / el * 1e3, "Mrows/s", expected, selectivity=sel)
