"""Random table updates (XOR with a value derived from the random index)."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .. import host as H
from .. import mcc as M
from ..config import Config
from ..sim import RngStream
from .common import CorrectnessError, make_system, report, run_to_end

VARIANTS = ("cpu_local", "cpu_far", "mcc")
BATCH = 64


def update_stream(seed: int, n_entries: int, updates: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and XOR values of the update sequence."""
    rng = RngStream(seed, "gups").numpy()
    ran = rng.integers(0, np.iinfo(np.int64).max, updates, dtype=np.int64).astype(np.uint64)
    return (ran % np.uint64(n_entries)).astype(np.int64), ran


def shadow_table(n_entries: int, idx: np.ndarray, vals: np.ndarray) -> np.ndarray:
    table = np.arange(n_entries, dtype=np.uint64)
    # XOR is associative and commutative, so duplicates fold in any order
    np.bitwise_xor.at(table, idx, vals)
    return table


def run_gups(table_bytes: int, updates: int, variant: str, config: Optional[Config] = None,
             seed: int = 1, llc_bytes: Optional[int] = None):
    if variant not in VARIANTS:
        raise ValueError(f"unknown gups variant {variant!r}")
    if table_bytes < 128 or table_bytes & (table_bytes - 1):
        raise ValueError("table_bytes must be a power of two >= one line")
    cfg = config or Config()
    llc = llc_bytes or cfg["desk.gups.llc_bytes"]
    system = make_system(cfg, mem__llc_bytes=llc,
                         mem__local_bytes=max(cfg["mem.local_bytes"], 2 * table_bytes),
                         mem__far_bytes=max(cfg["mem.far_bytes"], 2 * table_bytes))
    mem = system.mem
    backing = mem.local if variant == "cpu_local" else mem.far
    n = table_bytes // 8
    base = backing.alloc(table_bytes)
    table = backing.view(base, np.uint64, n)
    table[:] = np.arange(n, dtype=np.uint64)
    idx, vals = update_stream(seed, n, updates)
    addrs = (base + idx * 8).tolist()
    marks = {}

    if variant.startswith("cpu"):
        cycles = cfg["wl.gups.cpu_cycles"]
        line = cfg["mem.line_bytes"]

        def host_prog(ctx):
            # untimed warm-up: bring the table into the LLC as far as it fits
            yield H.AccessBatch(range(base, base + table_bytes, line))
            t0 = yield H.Now()
            for i in range(0, updates, BATCH):
                yield H.AccessBatch(addrs[i:i + BATCH], write=True, cycles_each=cycles)
            marks["elapsed"] = (yield H.Now()) - t0

        system.host(host_prog)
        run_to_end(system)
        np.bitwise_xor.at(table, idx, vals)
        mem.llc.writeback_all()
    else:
        cycles = cfg["wl.gups.mcc_cycles"]
        line = cfg["mem.line_bytes"]

        def cp(ctx):
            mcc = ctx.mcc
            slot = 0
            t0 = yield M.Now()
            for i in range(updates):
                a = addrs[i]
                la = a - a % line
                rs = yield M.ReadTs(slot, "read")
                yield M.CopyStart(M.CopyCommand(M.FAR_TO_SPAD, la, slot))
                yield M.AwaitTs(slot, "read", rs)
                off = slot * line + a % line
                old = int.from_bytes(mcc.spad[off:off + 8], "little")
                yield M.SpadWrite(slot, a % line, (old ^ int(vals[i])).to_bytes(8, "little"))
                yield M.Compute(cycles)
                ws = yield M.ReadTs(slot, "write")
                yield M.CopyStart(M.CopyCommand(M.SPAD_TO_FAR, la, slot))
                yield M.AwaitTs(slot, "write", ws)
            marks["elapsed"] = (yield M.Now()) - t0
            return 0

        system.mccs[0].run_cp(M.FunctionProgram(cp))
        run_to_end(system)

    expected = shadow_table(n, idx, vals)
    if not np.array_equal(table, expected):
        raise CorrectnessError(f"gups/{variant}: table differs from shadow model")
    checksum = int(np.bitwise_xor.reduce(table))
    elapsed = marks["elapsed"]
    return report(system, "gups", variant, {"table_bytes": table_bytes, "updates": updates, "llc_bytes": llc},
                  elapsed, updates / elapsed * 1e3 if elapsed else 0.0, "Mupdates/s", checksum)
