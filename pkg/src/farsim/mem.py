"""Far DRAM, CPU-local DRAM, the CPU<->device link and the non-coherent LLC."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import MemParams
from .kernels import SetAssocLRU
from .sim import BandwidthServer

LOCAL_BASE = 0x0000_1000_0000
FAR_BASE = 0x0100_0000_0000
SPAD_BASE = 0x0200_0000_0000
SPAD_STRIDE = 1 << 24
MMIO_BASE = 0x0300_0000_0000


class AddressFault(Exception):
    pass


@dataclass
class PerfCounters:
    link_bytes: int = 0
    ddr_bytes: int = 0
    local_bytes: int = 0
    far_line_ops: int = 0
    fifo_words: int = 0
    pipe_lines: int = 0
    mmio_ops: int = 0
    prefetch_issued: int = 0
    stale_reads: int = 0
    llc_hits: int = 0
    llc_misses: int = 0
    writebacks: int = 0
    stall_ns: dict = field(default_factory=dict)

    def snapshot(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "stall_ns"}
        out["stall_ns"] = dict(self.stall_ns)
        return out

    def diff(self, before: dict) -> dict:
        now = self.snapshot()
        out = {k: now[k] - before[k] for k in now if k != "stall_ns"}
        out["stall_ns"] = {k: v - before["stall_ns"].get(k, 0.0) for k, v in now["stall_ns"].items()}
        return out


class Backing:
    """A byte store with per-line write versions."""

    def __init__(self, name: str, base: int, size: int, line_bytes: int = 128):
        if size % line_bytes:
            raise ValueError("size must be a multiple of the line size")
        self.name = name
        self.base = base
        self.size = size
        self.line_bytes = line_bytes
        self.data = np.zeros(size, dtype=np.uint8)
        self.buf = memoryview(self.data)
        self.version = np.zeros(size // line_bytes, dtype=np.int64)
        self._brk = 0

    def contains(self, addr: int, n: int = 1) -> bool:
        return self.base <= addr and addr + n <= self.base + self.size

    def check(self, addr: int, n: int = 1) -> int:
        if not self.contains(addr, n):
            raise AddressFault(f"{self.name}: address {addr:#x}+{n} out of range")
        return addr - self.base

    def alloc(self, nbytes: int, align: int = 128) -> int:
        """Bump-allocate a region; returns its address."""
        start = -(-self._brk // align) * align
        end = start + -(-nbytes // self.line_bytes) * self.line_bytes
        if end > self.size:
            raise MemoryError(f"{self.name}: out of memory allocating {nbytes} bytes")
        self._brk = end
        return self.base + start

    def view(self, addr: int, dtype, count: int) -> np.ndarray:
        off = self.check(addr, np.dtype(dtype).itemsize * count)
        return self.data[off:off + np.dtype(dtype).itemsize * count].view(dtype)

    def read_line(self, line_addr: int) -> bytes:
        off = self.check(line_addr, self.line_bytes)
        return self.data[off:off + self.line_bytes].tobytes()

    def commit_line(self, line_addr: int, payload) -> None:
        off = self.check(line_addr, self.line_bytes)
        self.data[off:off + self.line_bytes] = np.frombuffer(bytes(payload), dtype=np.uint8)
        self.version[off // self.line_bytes] += 1

    def touch_line(self, line_addr: int) -> None:
        off = self.check(line_addr, self.line_bytes)
        self.version[off // self.line_bytes] += 1

    def line_version(self, line_addr: int) -> int:
        return int(self.version[(line_addr - self.base) // self.line_bytes])


class MemorySystem:
    """Timing and data for every memory path outside the scratchpads.

    Far DRAM sits behind ``ddr_channels`` interleaved channels (line index
    modulo channel count).  CPU-origin far accesses also cross the link,
    whose fixed one-way latency is chosen so an idle read totals the
    configured external latency.
    """

    def __init__(self, params: MemParams, far_bytes: int, local_bytes: int, counters: PerfCounters | None = None):
        self.p = params
        self.line = params.line_bytes
        self.counters = counters or PerfCounters()
        self.far = Backing("far", FAR_BASE, far_bytes, self.line)
        self.local = Backing("local", LOCAL_BASE, local_bytes, self.line)
        per_channel = params.internal_bw_Bps / params.ddr_channels / 1e9
        self.channels = [BandwidthServer(f"ddr{i}", per_channel) for i in range(params.ddr_channels)]
        self.link = BandwidthServer("link", params.external_bw_Bps / 1e9)
        self.local_server = BandwidthServer("local", params.local_bw_Bps / 1e9)
        self.oneway = params.link_oneway_ns
        self.llc = Llc(self, params)

    # -- far DRAM ---------------------------------------------------------------
    def channel_of(self, line_addr: int) -> BandwidthServer:
        return self.channels[((line_addr - FAR_BASE) // self.line) % len(self.channels)]

    def far_line_op(self, origin: str, kind: str, line_addr: int, arrival: float, data=None) -> float:
        """Time one 128-byte far-memory transaction; returns its completion.

        For writes ``data`` (if given) is committed immediately and the line
        version bumped; the returned time is when the write reaches DRAM.
        """
        if line_addr % self.line:
            raise AddressFault(f"unaligned line address {line_addr:#x}")
        self.far.check(line_addr, self.line)
        c = self.counters
        c.ddr_bytes += self.line
        c.far_line_ops += 1
        ch = self.channel_of(line_addr)
        lat = self.p.internal_latency_ns
        if origin == "cpu":
            c.link_bytes += self.line
            start = self.link.occupy(arrival, self.line)
            ddr_start = ch.occupy(start + self.oneway, self.line)
            done = ddr_start + lat
            if kind == "read":
                done += self.oneway
        elif origin in ("mcc", "copy-engine"):
            done = ch.occupy(arrival, self.line) + lat
        else:
            raise ValueError(f"unknown origin {origin!r}")
        if kind == "write":
            if data is not None:
                self.far.commit_line(line_addr, data)
            else:
                self.far.touch_line(line_addr)
        elif kind != "read":
            raise ValueError(f"unknown kind {kind!r}")
        return done

    def copy_lines(self, kind: str, line_addr: int, count: int, arrival: float) -> float:
        """Copy-engine transfer of ``count`` consecutive lines; returns last completion."""
        done = arrival
        for i in range(count):
            t = self.far_line_op("copy-engine", kind, line_addr + i * self.line, arrival)
            if t > done:
                done = t
        return done

    # -- CPU-local DRAM -----------------------------------------------------------
    def local_line_op(self, kind: str, line_addr: int, arrival: float, data=None) -> float:
        self.local.check(line_addr, self.line)
        self.counters.local_bytes += self.line
        start = self.local_server.occupy(arrival, self.line)
        if kind == "write":
            if data is not None:
                self.local.commit_line(line_addr, data)
            else:
                self.local.touch_line(line_addr)
        return start + self.p.local_latency_ns

    def backing_of(self, addr: int) -> Backing:
        if self.far.contains(addr):
            return self.far
        if self.local.contains(addr):
            return self.local
        raise AddressFault(f"address {addr:#x} is not DRAM")

    def line_op(self, kind: str, line_addr: int, arrival: float, data=None) -> float:
        if self.far.contains(line_addr):
            return self.far_line_op("cpu", kind, line_addr, arrival, data)
        return self.local_line_op(kind, line_addr, arrival, data)


class LineState:
    """A resident line.  ``data`` stays None for lines only touched by
    timing-only accesses; writing such a line back moves no bytes."""

    __slots__ = ("data", "version", "ready")

    def __init__(self, data: bytearray | None, version: int, ready: float):
        self.data = data
        self.version = version
        self.ready = ready


class Llc:
    """Shared, non-coherent, write-allocate write-back LLC in front of DRAM."""

    def __init__(self, mem: MemorySystem, params: MemParams):
        self.mem = mem
        self.line = params.line_bytes
        self.hit_ns = params.llc_hit_ns
        n_lines = params.llc_bytes // params.line_bytes
        self.ways = params.llc_ways
        self.n_sets = n_lines // self.ways
        self.capacity = self.n_sets * self.ways
        self.tags = SetAssocLRU(self.n_sets, self.ways)
        self.lines: dict[int, LineState] = {}

    def _index(self, line_addr: int) -> int:
        return line_addr // self.line

    def access(self, kind: str, addr: int, t: float, functional: bool = False) -> tuple[bool, float]:
        """Read/write/prefetch ``addr`` at time ``t``.

        Returns ``(hit, ready)`` where ``ready`` is when the data is usable.
        A dirty victim is written back before the fill is issued.  A
        ``functional`` write means the caller updates DRAM bytes itself, so
        the cached copy is dropped and a later write-back moves no bytes.
        """
        line_addr = addr - addr % self.line
        idx = line_addr // self.line
        write = kind == "write"
        hit, victim, victim_dirty = self.tags.access(idx, write)
        c = self.mem.counters
        if hit:
            c.llc_hits += 1
            st = self.lines[line_addr]
            if functional:
                st.data = None
            ready = st.ready if st.ready > t else t
            return True, ready + self.hit_ns
        c.llc_misses += 1
        if victim >= 0:
            vaddr = victim * self.line
            vst = self.lines.pop(vaddr)
            if victim_dirty:
                c.writebacks += 1
                self.mem.line_op("write", vaddr, t, vst.data)
        ready = self.mem.line_op("read", line_addr, t)
        backing = self.mem.backing_of(line_addr)
        data = None if functional else bytearray(backing.read_line(line_addr))
        self.lines[line_addr] = LineState(data, backing.line_version(line_addr), ready)
        return False, ready

    def data_of(self, addr: int) -> bytearray:
        """Cached bytes of a resident line.

        Lines last written functionally hold no bytes of their own; their
        DRAM bytes are authoritative and are copied in here.
        """
        line_addr = addr - addr % self.line
        st = self.lines[line_addr]
        backing = self.mem.backing_of(line_addr)
        if st.data is None:
            st.data = bytearray(backing.read_line(line_addr))
        elif backing.line_version(line_addr) != st.version:
            self.mem.counters.stale_reads += 1
        return st.data

    def state(self, addr: int) -> LineState | None:
        return self.lines.get(addr - addr % self.line)

    def contains(self, addr: int) -> bool:
        return (addr - addr % self.line) in self.lines

    def is_dirty(self, addr: int) -> bool:
        return self.tags.is_dirty(self._index(addr - addr % self.line))

    def flush(self, addr: int, t: float) -> float | None:
        """Write back a dirty line (it stays cached, clean); returns commit time or None."""
        line_addr = addr - addr % self.line
        st = self.lines.get(line_addr)
        if st is None:
            return None
        idx = self._index(line_addr)
        if not self.tags.is_dirty(idx):
            return None
        self.tags.set_dirty(idx, False)
        self.mem.counters.writebacks += 1
        done = self.mem.line_op("write", line_addr, max(t, st.ready), st.data)
        st.version = self.mem.backing_of(line_addr).line_version(line_addr)
        return done

    def writeback_all(self) -> int:
        """Untimed write-back of every dirty line (used to take checksums)."""
        n = 0
        for line_addr, st in self.lines.items():
            idx = self._index(line_addr)
            if self.tags.is_dirty(idx):
                self.tags.set_dirty(idx, False)
                backing = self.mem.backing_of(line_addr)
                if st.data is not None:
                    backing.commit_line(line_addr, st.data)
                else:
                    backing.touch_line(line_addr)
                st.version = backing.line_version(line_addr)
                n += 1
        return n

    def invalidate(self, addr: int) -> bool:
        """Drop a cached copy without writeback; returns whether it was present."""
        line_addr = addr - addr % self.line
        if self.tags.remove(self._index(line_addr)) < 0:
            return False
        del self.lines[line_addr]
        return True

    def staleness_probe(self, addr: int) -> str:
        """'fresh' if the cached copy matches the DRAM line version, else 'stale'."""
        line_addr = addr - addr % self.line
        st = self.lines.get(line_addr)
        if st is None:
            raise KeyError(f"line {line_addr:#x} not cached")
        current = self.mem.backing_of(line_addr).line_version(line_addr)
        return "fresh" if st.version == current else "stale"

    @property
    def occupancy(self) -> int:
        return len(self.lines)
