"""Bulk memory operations on far memory: memset, memclr, memcpy, memcpy_opt.

The CPU variant streams write-allocate stores, flushes the destination and
reads the last written line back.  The CP variant receives the request
over a cache-line pipe, drives the copy engine, performs the same readback
and answers over a second pipe.
"""

from __future__ import annotations

import struct
from typing import Optional

import numpy as np

from .. import host as H
from .. import mcc as M
from .. import pipes as P
from ..config import Config
from ..sim import RngStream
from .common import CorrectnessError, make_system, report, run_to_end

OPS = ("memset", "memclr", "memcpy", "memcpy_opt")
PATTERN = 0xA5
ZERO_LINES = 64
REPLY_BASE = 8


def run_bulk(op: str, size: int, variant: str, config: Optional[Config] = None, seed: int = 1):
    if op not in OPS:
        raise ValueError(f"unknown bulk op {op!r}")
    if variant not in ("cpu", "cp"):
        raise ValueError(f"unknown bulk variant {variant!r}")
    cfg = config or Config()
    line = cfg["mem.line_bytes"]
    if size < line or size % line:
        raise ValueError("size must be a positive multiple of the line size")
    system = make_system(cfg)
    far = system.mem.far
    n_lines = size // line
    dst = far.alloc(size)
    src = far.alloc(size) if op.startswith("memcpy") else None
    dview = far.view(dst, np.uint8, size)
    rng = RngStream(seed, f"bulk/{op}").numpy()
    dview[:] = rng.integers(0, 256, size, dtype=np.uint8)
    if src is not None:
        far.view(src, np.uint8, size)[:] = rng.integers(0, 256, size, dtype=np.uint8)
        expected = far.view(src, np.uint8, size).copy()
    else:
        expected = np.full(size, PATTERN if op == "memset" else 0, dtype=np.uint8)
    marks = {}

    if variant == "cpu":
        cycles = cfg["wl.bulk.cpu_line_cycles"]

        def host_prog(ctx):
            t0 = yield H.Now()
            dlines = [dst + i * line for i in range(n_lines)]
            if src is None:
                yield H.AccessBatch(dlines, write=True, cycles_each=cycles, posted=True)
                dview[:] = expected
            else:
                chunk = 16
                for i in range(0, n_lines, chunk):
                    slines = [src + j * line for j in range(i, min(n_lines, i + chunk))]
                    yield H.AccessBatch(slines, prefetch_ahead=8)
                    yield H.AccessBatch(dlines[i:i + chunk], write=True, cycles_each=cycles, posted=True)
                dview[:] = far.view(src, np.uint8, size)
            yield H.Flush(dst, size)
            yield H.Fence()
            last = dst + size - line
            yield H.Invalidate(last)
            yield H.Load(last, 8)
            marks["end"] = (yield H.Now()) - t0

        system.host(host_prog)
    else:
        chunk = cfg["wl.bulk.chunk_lines"]
        word_cycles = cfg["wl.bulk.memset_word_cycles"]

        def cp(ctx):
            rx = P.ClReceiver(0, 1)
            tx = P.ClProducer(REPLY_BASE, 1)
            yield from rx.open()
            yield from tx.open()
            req = []

            def dispatch(ev):
                if tx.owns(ev.line):
                    yield from tx.on_read(ev)
                else:
                    yield from rx.handle(ev, req.extend)

            while not req:
                yield from dispatch((yield M.AwaitNotify()))
            opcode, d, s, nbytes = struct.unpack("<QQQQ", b"".join(req[:4]))
            n = nbytes // line
            if opcode == 1:
                yield from _cp_memclr(d, n, line)
            elif opcode == 0:
                yield from _cp_memset(ctx.mcc, d, n, line, word_cycles)
            elif opcode == 2:
                yield from _cp_memcpy(d, s, n, chunk, line, depth=1)
            else:
                yield from _cp_memcpy(d, s, n, chunk, line, depth=2)
            # readback of the last written line
            since = yield M.ReadTs(100, "read")
            yield M.CopyStart(M.CopyCommand(M.FAR_TO_SPAD, d + nbytes - line, 100))
            yield M.AwaitTs(100, "read", since)
            yield from tx.send([struct.pack("<Q", 1)], dispatch)
            return 0

        def host_prog(ctx):
            system.mccs[0].run_cp(M.FunctionProgram(cp), at=0.0)
            snd = P.ClSender(0, 0, 1, 8, cfg["pipe.cpu_line_ns"])
            rcv = P.ClConsumer(0, REPLY_BASE, 1)
            yield from rcv.prime()
            yield H.Compute(2000)  # let the CP arm its pipes
            t0 = yield H.Now()
            opcode = OPS.index(op)
            msg = struct.pack("<QQQQ", opcode, dst, src or 0, size)
            yield from snd.send([msg[i:i + 8] for i in range(0, 32, 8)])
            done = yield from rcv.recv()
            if not done:
                raise CorrectnessError("no completion from CP")
            marks["end"] = (yield H.Now()) - t0

        system.host(host_prog)

    run_to_end(system)
    got = far.view(dst, np.uint8, size)
    if not np.array_equal(got, expected):
        bad = int(np.flatnonzero(got != expected)[0])
        raise CorrectnessError(f"{op}/{variant}: destination differs at byte {bad}")
    elapsed = marks["end"]
    checksum = int(np.bitwise_xor.reduce(got.view(np.uint64))) if size >= 8 else 0
    return report(system, "bulk", f"{op}_{variant}" if variant == "cp" else f"{op}_cpu",
                  {"op": op, "size": size}, elapsed, size / elapsed, "GB/s", checksum)


def _cp_memclr(d: int, n: int, line: int):
    zero = 200  # lines 200..263 stay zero
    since = yield M.ReadTs(zero, "write")
    cmds = []
    for i in range(0, n, ZERO_LINES):
        cnt = min(ZERO_LINES, n - i)
        cmds.append(M.CopyCommand(M.SPAD_TO_FAR, d + i * line, zero, cnt))
    yield M.CopyStart(cmds, group=True)
    yield M.AwaitTs(zero, "write", since)


def _cp_memset(mcc, d: int, n: int, line: int, word_cycles: float):
    ring = 16
    base = 300
    fill = bytes([PATTERN]) * line
    pending = {}
    for i in range(n):
        slot = base + i % ring
        if slot in pending:
            yield M.AwaitTs(slot, "write", pending.pop(slot))
        # per-line re-initialisation of the fill value, one word at a time
        yield M.Compute(word_cycles * (line // 4))
        mcc.store_line(slot, fill)  # bytes written by the words above
        since = yield M.ReadTs(slot, "write")
        yield M.CopyStart(M.CopyCommand(M.SPAD_TO_FAR, d + i * line, slot))
        pending[slot] = since
    for slot, since in pending.items():
        yield M.AwaitTs(slot, "write", since)


def _cp_memcpy(d: int, s: int, n: int, chunk: int, line: int, depth: int):
    bufs = [300 + b * chunk for b in range(depth)]
    write_since = {}
    pieces = [(i, min(chunk, n - i)) for i in range(0, n, chunk)]
    inflight = []  # (buf, start, count, read_since)
    k = 0
    while k < len(pieces) or inflight:
        while k < len(pieces) and len(inflight) < depth:
            buf = bufs[k % depth]
            if buf in write_since:
                # the buffer is refilled only after its previous write landed
                yield M.AwaitTs(buf, "write", write_since.pop(buf))
            start, cnt = pieces[k]
            rs = yield M.ReadTs(buf, "read")
            yield M.CopyStart(M.CopyCommand(M.FAR_TO_SPAD, s + start * line, buf, cnt))
            inflight.append((buf, start, cnt, rs))
            k += 1
        buf, start, cnt, rs = inflight.pop(0)
        yield M.AwaitTs(buf, "read", rs)
        ws = yield M.ReadTs(buf, "write")
        yield M.CopyStart(M.CopyCommand(M.SPAD_TO_FAR, d + start * line, buf, cnt))
        write_since[buf] = ws
    for buf, ws in write_since.items():
        yield M.AwaitTs(buf, "write", ws)
