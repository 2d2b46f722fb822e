"""Host CPU cores: cached loads/stores through the shared LLC, software
prefetch, flushes, uncached register access, and scratchpad line transfers.

Demand misses stall the core until the data returns; software prefetches
are non-blocking and tracked in a separate queue of ``cpu.prefetch_slots``
lines; issuing one into a full queue waits for the oldest to complete.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Any, Optional, Sequence

from .mcc import ChannelProgram, Mcc, SpawnError
from .sim import BLOCK, Agent, RngStream, sync

CTRL_REG = 28
READY_REG = 29
DONE_REG = 27
CTRL_GO = 1
CTRL_GO_REPROGRAM = 2
READY_OK = 1
READY_FAILED = 2


# -- host actions ----------------------------------------------------------------------

@dataclass(slots=True)
class Compute:
    cycles: float


@dataclass(slots=True)
class Access:
    """Timing-only cached access (data handled functionally by the caller)."""

    addr: int
    write: bool = False


@dataclass(slots=True)
class AccessBatch:
    """Timing-only cached accesses in order, ``cycles_each`` of work per item.

    With ``prefetch_ahead`` > 0 the address that many items ahead is
    prefetched before each demand access.  ``posted`` writes do not wait
    for their fill; they only take one of the ``cpu.mlp`` miss slots.
    ``overlap`` reads are independent loads that an out-of-order core keeps
    in flight the same way, stalling only when every slot is taken.
    """

    addrs: Sequence[int]
    write: bool = False
    cycles_each: float = 0.0
    prefetch_ahead: int = 0
    posted: bool = False
    overlap: bool = False


@dataclass(slots=True)
class Load:
    addr: int
    size: int = 8


@dataclass(slots=True)
class Store:
    addr: int
    data: bytes


@dataclass(slots=True)
class Prefetch:
    addr: int


@dataclass(slots=True)
class Flush:
    addr: int
    size: int = 128


@dataclass(slots=True)
class Invalidate:
    addr: int
    size: int = 128


@dataclass(slots=True)
class Fence:
    """Wait until this core's posted writebacks have reached memory."""


@dataclass(slots=True)
class MmioRead:
    mcc: int
    reg: int


@dataclass(slots=True)
class MmioWrite:
    mcc: int
    reg: int
    value: int


@dataclass(slots=True)
class SpadLineRead:
    """Coherent read of a scratchpad line; returns a :class:`Handle`."""

    mcc: int
    line: int


@dataclass(slots=True)
class SpadLineWrite:
    """Posted write of a whole scratchpad line; returns a :class:`Handle` for the ack."""

    mcc: int
    line: int
    data: bytes


@dataclass(slots=True)
class Await:
    handle: "Handle"


@dataclass(slots=True)
class AwaitCp:
    """Poll an MCC's completion register until its channel program exits."""

    mcc: int


@dataclass(slots=True)
class Stage:
    """Host-side staging of a channel program on an MCC (no time)."""

    mcc: int
    program: ChannelProgram


@dataclass(slots=True)
class Now:
    pass


@dataclass(slots=True)
class WaitWake:
    """Block until another guest calls ``core.wake``."""


class Handle:
    __slots__ = ("done", "value", "time", "waiter")

    def __init__(self):
        self.done = False
        self.value: Any = None
        self.time = math.inf
        self.waiter: Optional[Agent] = None

    def complete(self, value: Any = None) -> None:
        self.done = True
        self.value = value
        w = self.waiter
        if w is not None:
            self.waiter = None
            w.wake(value)


class CpuCore:
    def __init__(self, system, index: int):
        self.system = system
        self.index = index
        cfg = system.config
        self.engine = system.engine
        self.mem = system.mem
        self.llc = system.mem.llc
        self.counters = system.counters
        self.core = Agent(self.engine, f"cpu{index}", cfg["cpu.freq_hz"], cfg["sim.quantum_ns"])
        self.mlp = cfg["cpu.mlp"]
        self.flush_ns = cfg["cpu.flush_ns"]
        self.line = cfg["mem.line_bytes"]
        self.spad_oneway = cfg["spad.cpu_oneway_ns"]
        self.mmio_leg = (cfg["mmio.rtt_ns"] - cfg["mmio.port_ns"]) / 2
        self.mmio_rtt = cfg["mmio.rtt_ns"]
        self.mmio_write_ns = cfg["mmio.write_core_ns"]
        self.inflight: list[float] = []
        self.pf_slots = cfg["cpu.prefetch_slots"]
        self.pf_inflight: list[float] = []
        self.wb_done = 0.0
        h = self.core._handlers
        for cls, fn in (
            (Compute, self._compute), (Access, self._access), (AccessBatch, self._access_batch),
            (Load, self._load), (Store, self._store), (Prefetch, self._prefetch),
            (Flush, self._flush), (Invalidate, self._invalidate), (Fence, self._fence),
            (MmioRead, self._mmio_read), (MmioWrite, self._mmio_write),
            (SpadLineRead, self._spad_read), (SpadLineWrite, self._spad_write),
            (Await, self._await), (AwaitCp, self._await_cp), (Stage, self._stage), (Now, self._now),
            (WaitWake, self._wait_wake),
        ):
            h[cls] = fn

    def start(self, gen, at: Optional[float] = None) -> None:
        self.core.start(gen, at)

    # -- caches ------------------------------------------------------------------------
    def _stall(self, ready: float) -> None:
        t = self.core.t
        if ready > t:
            self.core.t = ready
            self.counters.stall_ns[self.core.name] = self.counters.stall_ns.get(self.core.name, 0.0) + ready - t

    def _compute(self, a: Compute):
        ns = a.cycles * self.core.cycle_ns
        self.core.t += ns
        self.core.busy_ns += ns

    def _now(self, a: Now):
        return self.core.t

    def _access(self, a: Access):
        _, ready = self.llc.access("write" if a.write else "read", a.addr, self.core.t, a.write)
        self._stall(ready)

    def _access_batch(self, a: AccessBatch):
        kind = "write" if a.write else "read"
        llc = self.llc
        addrs = a.addrs
        n = len(addrs)
        step = a.cycles_each * self.core.cycle_ns
        ahead = a.prefetch_ahead
        posted = a.posted and a.write
        if ahead:
            for j in range(min(ahead, n)):
                self._issue_prefetch(addrs[j])
        for i in range(n):
            if ahead and i + ahead < n:
                self._issue_prefetch(addrs[i + ahead])
            if posted:
                self._posted_write(addrs[i], True)
            elif a.overlap and not a.write:
                self._overlapped_read(addrs[i])
            else:
                _, ready = llc.access(kind, addrs[i], self.core.t, a.write)
                self._stall(ready)
            if step:
                self.core.t += step
                self.core.busy_ns += step

    def _slot(self) -> None:
        """Wait for a free miss slot."""
        q = self.inflight
        t = self.core.t
        while q and q[0] <= t:
            heapq.heappop(q)
        if len(q) >= self.mlp:
            self._stall(heapq.heappop(q))

    def _posted_write(self, addr: int, functional: bool) -> None:
        if self.llc.contains(addr):
            _, ready = self.llc.access("write", addr, self.core.t, functional)
            return
        self._slot()
        _, ready = self.llc.access("write", addr, self.core.t, functional)
        heapq.heappush(self.inflight, ready)

    def _overlapped_read(self, addr: int) -> None:
        if self.llc.contains(addr):
            _, ready = self.llc.access("read", addr, self.core.t)
            if ready <= self.core.t:
                return
            # still in flight: it occupies a slot until it lands
            self._slot()
        else:
            self._slot()
            _, ready = self.llc.access("read", addr, self.core.t)
        heapq.heappush(self.inflight, ready)

    def _load(self, a: Load):
        off = a.addr % self.line
        if off + a.size > self.line:
            raise ValueError("load crosses a cache line")
        _, ready = self.llc.access("read", a.addr, self.core.t)
        self._stall(ready)
        return bytes(self.llc.data_of(a.addr)[off:off + a.size])

    def _store(self, a: Store):
        off = a.addr % self.line
        if off + len(a.data) > self.line:
            raise ValueError("store crosses a cache line")
        self._posted_write(a.addr, False)
        self.llc.data_of(a.addr)[off:off + len(a.data)] = a.data

    def _issue_prefetch(self, addr: int) -> None:
        t = self.core.t
        q = self.pf_inflight
        while q and q[0] <= t:
            heapq.heappop(q)
        if self.llc.contains(addr):
            return
        if len(q) >= self.pf_slots:
            # the prefetch waits in the load queue for a free entry
            self._stall(heapq.heappop(q))
            t = self.core.t
        self.counters.prefetch_issued += 1
        _, ready = self.llc.access("read", addr, t)
        heapq.heappush(q, ready)

    def _prefetch(self, a: Prefetch):
        self._issue_prefetch(a.addr)

    def _flush(self, a: Flush):
        first = a.addr - a.addr % self.line
        for addr in range(first, a.addr + a.size, self.line):
            self.core.t += self.flush_ns
            done = self.llc.flush(addr, self.core.t)
            if done is not None and done > self.wb_done:
                self.wb_done = done

    def _invalidate(self, a: Invalidate):
        first = a.addr - a.addr % self.line
        for addr in range(first, a.addr + a.size, self.line):
            self.core.t += self.flush_ns
            self.llc.invalidate(addr)

    def _fence(self, a: Fence):
        self._stall(self.wb_done)

    # -- uncached registers -------------------------------------------------------------
    def _mcc(self, i: int) -> Mcc:
        return self.system.mccs[i]

    def _port(self, mcc: Mcc, arrival: float) -> float:
        start = arrival if arrival > mcc.mmio_port_free else mcc.mmio_port_free
        mcc.mmio_port_free = start + mcc.port_ns
        return start + mcc.port_ns

    @sync
    def _mmio_read(self, a: MmioRead):
        mcc = self._mcc(a.mcc)
        self.counters.mmio_ops += 1
        served = self._port(mcc, self.core.t + self.mmio_leg)
        self.engine.at(served, self._mmio_snapshot, mcc, a.reg, served + self.mmio_leg)
        return BLOCK

    def _mmio_snapshot(self, mcc: Mcc, reg: int, back: float) -> None:
        self.core.wake(mcc.cpu_reg_read(reg), at=back)

    @sync
    def _mmio_write(self, a: MmioWrite):
        mcc = self._mcc(a.mcc)
        self.counters.mmio_ops += 1
        served = self._port(mcc, self.core.t + self.mmio_leg)
        self.engine.at(served, mcc.cpu_reg_write, a.reg, a.value)
        self.core.t += self.mmio_write_ns
        return None

    # -- scratchpad lines ---------------------------------------------------------------
    def _to_cpu(self, handle: Handle, t: float, value: Any) -> None:
        arrive = self.mem.link.request(t, self.line) + self.spad_oneway
        self.mem.counters.link_bytes += self.line
        handle.time = arrive
        self.engine.at(arrive, handle.complete, value)

    @sync
    def _spad_read(self, a: SpadLineRead):
        mcc = self._mcc(a.mcc)
        h = Handle()
        self.counters.pipe_lines += 1
        self.engine.at(self.core.t + self.spad_oneway, mcc.cpu_read, a.line,
                       lambda t, data: self._to_cpu(h, t, data))
        return h

    @sync
    def _spad_write(self, a: SpadLineWrite):
        mcc = self._mcc(a.mcc)
        h = Handle()
        self.counters.pipe_lines += 1
        self.counters.link_bytes += self.line
        arrive = self.mem.link.request(self.core.t, self.line) + self.spad_oneway

        def ack(t: float) -> None:
            h.time = t + self.spad_oneway
            self.engine.at(h.time, h.complete, t)

        self.engine.at(arrive, mcc.cpu_write, a.line, bytes(a.data), ack)
        return h

    @sync
    def _await(self, a: Await):
        h = a.handle
        if h.done:
            return h.value
        h.waiter = self.core
        return BLOCK

    @sync
    def _await_cp(self, a: AwaitCp):
        mcc = self._mcc(a.mcc)
        t0 = self.core.t
        rtt = self.mmio_rtt
        snap = rtt - self.mmio_leg

        def on_exit(agent, t0=t0):
            now = self.engine.now
            k = max(0, math.ceil((now - t0 - snap) / rtt - 1e-12))
            self.core.wake(mcc.exit_code, at=t0 + k * rtt + rtt)

        if not mcc.busy:
            self.core.t += rtt
            self.counters.mmio_ops += 1
            return mcc.exit_code
        mcc.core.on_exit.append(on_exit)
        return BLOCK

    @sync
    def _wait_wake(self, a: WaitWake):
        return BLOCK

    def _stage(self, a: Stage):
        self._mcc(a.mcc).staged = a.program


class HostContext:
    """Handed to host programs: which core they run on and the system."""

    def __init__(self, system, core: CpuCore):
        self.system = system
        self.core = core
        self.index = core.index
        self.config = system.config


class Barrier:
    """Phase barrier for ``n`` host programs: everyone leaves at the latest arrival."""

    def __init__(self, n: int):
        self.n = n
        self.cores: list = []
        self.t = 0.0

    def wait(self, ctx: HostContext):
        t = yield Now()
        self.t = max(self.t, t)
        self.cores.append(ctx.core.core)
        if len(self.cores) == self.n:
            cores, at = self.cores, self.t
            self.cores, self.t = [], 0.0
            engine = ctx.system.engine

            def release():
                if not all(c.blocked for c in cores):
                    engine.at(engine.now, release)
                    return
                for c in cores:
                    c.wake(None, at=at)

            engine.at(at, release)
        yield WaitWake()


def spawn(ctx: HostContext, mcc: int, program: ChannelProgram, verify: Optional[bool] = None,
          reprogram: bool = False):
    """Host-side spawn sequence; a generator to be used with ``yield from``.

    Resets the MCC, writes the channel block into its scratchpad, starts the
    firmware, then polls the ready register.  Returns the elapsed time.
    """
    system = ctx.system
    if verify is None:
        verify = system.config["spawn.verify"]
    size = program.binary_size
    if size > system.config["spawn.max_bytes"]:
        raise SpawnError(f"channel block of {size} bytes exceeds the spawn budget")
    t0 = yield Now()
    yield Stage(mcc, program)
    system.mccs[mcc].staged_verify = verify
    line = system.config["mem.line_bytes"]
    n_lines = -(-size // line)
    handles = []
    for i in range(n_lines):
        handles.append((yield SpadLineWrite(mcc, i % 512, bytes(line))))
    for h in handles[-1:]:
        yield Await(h)
    yield MmioWrite(mcc, CTRL_REG, CTRL_GO_REPROGRAM if reprogram else CTRL_GO)
    while True:
        status = yield MmioRead(mcc, READY_REG)
        if status == READY_OK:
            break
        if status == READY_FAILED:
            raise SpawnError(f"mcc{mcc} refused the channel program")
    t1 = yield Now()
    return t1 - t0


def firmware_control(mcc: Mcc, value: int) -> None:
    """Device-side reaction to a control-register write."""
    system = mcc.system
    mcc.regs[READY_REG] = 0
    program = getattr(mcc, "staged", None)
    if program is None or (mcc.busy and value != CTRL_GO_REPROGRAM):
        mcc.regs[READY_REG] = READY_FAILED
        return
    if mcc.busy:
        mcc.terminate()
    try:
        size = program.binary_size
        rng = RngStream(system.config["sim.seed"], f"spawn/{mcc.index}", system.spawn_count)
        system.spawn_count += 1
        jitter = system.config["spawn.jitter"] * (2 * rng.uniform() - 1)
        dt = mcc.spawn_time_ns(size, getattr(mcc, "staged_verify", True), jitter)
    except SpawnError:
        mcc.regs[READY_REG] = READY_FAILED
        return
    mcc.busy = True  # reserved while the firmware installs the block

    def ready():
        mcc.busy = False
        mcc.regs[DONE_REG] = 0
        mcc.run_cp(program, at=system.engine.now)
        mcc.regs[READY_REG] = READY_OK

    system.engine.schedule(dt, ready)
