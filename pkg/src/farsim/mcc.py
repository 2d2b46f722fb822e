"""Memory channel controller: scratchpad, line locks, notifier, copy engine,
inter-MCC FIFOs, I/O registers, and cooperative channel-program execution.

Channel programs are generators yielding the action objects defined here;
the value sent back into the generator is the action's result.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Optional

from .sim import BLOCK, Agent, Engine, SimError, sync

SPAD_LINES = 512
N_IOREGS = 32
STATUS_REG = 31
ERROR_REG = 30
CTRL_REG = 28
DONE_REG = 27


class LockState(Enum):
    UNLOCKED = 0
    READ = 1
    WRITE = 2


class Req(Enum):
    CPU_READ = "CpuRead"
    CPU_WRITE = "CpuWrite"
    COPY_READ_DONE = "CopyReadDone"
    COPY_WRITE_DONE = "CopyWriteDone"


class LockStateError(SimError):
    pass


class OverlapError(SimError):
    pass


class SpawnError(SimError):
    pass


class NotifierOverflow(SimError):
    pass


@dataclass(frozen=True, slots=True)
class NotifierEvent:
    line: int
    request: Req


FAR_TO_SPAD = "far_to_spad"
SPAD_TO_FAR = "spad_to_far"


@dataclass(frozen=True, slots=True)
class CopyCommand:
    direction: str
    far_line_addr: int
    spad_index: int
    line_count: int = 1
    notify: bool = False

    def __post_init__(self):
        if self.direction not in (FAR_TO_SPAD, SPAD_TO_FAR):
            raise ValueError(f"bad copy direction {self.direction!r}")
        if self.line_count < 1:
            raise ValueError("line_count must be >= 1")
        if self.spad_index < 0 or self.spad_index + self.line_count > SPAD_LINES:
            raise ValueError("scratchpad range out of bounds")


# -- guest actions -------------------------------------------------------------------

@dataclass(slots=True)
class Compute:
    cycles: float


@dataclass(slots=True)
class CopyStart:
    """Issue one or more copy commands.

    With ``group`` set, every line of the batch completes (and is stamped)
    when the slowest command finishes, in a single event.
    """

    commands: Any  # CopyCommand or sequence of them
    group: bool = False


@dataclass(slots=True)
class CopyDone:
    line: int
    which: str  # "read" | "write"
    since: int


@dataclass(slots=True)
class ReadTs:
    line: int
    which: str


@dataclass(slots=True)
class AwaitTs:
    """Poll until every listed line's timestamp exceeds ``since``."""

    lines: Any  # int or sequence
    which: str
    since: int


@dataclass(slots=True)
class Stamp:
    """Current global counter value; any copy issued afterwards completes later."""


@dataclass(slots=True)
class Lock:
    line: int
    mode: str  # "read" | "write"


@dataclass(slots=True)
class Unlock:
    line: int


@dataclass(slots=True)
class Release:
    """Serve deferred CPU requests on a locked line but keep it locked."""

    line: int


@dataclass(slots=True)
class AwaitNotify:
    pass


@dataclass(slots=True)
class PopNotify:
    pass


@dataclass(slots=True)
class FifoSend:
    """Send a word, or a tuple of words atomically.

    A full FIFO blocks the sender; with ``block=False`` the send is refused
    instead and the action returns False.
    """

    peer: int
    word: Any
    block: bool = True


@dataclass(slots=True)
class FifoRecv:
    peer: int
    block: bool = True


@dataclass(slots=True)
class AwaitFifo:
    """Block until any inbound FIFO holds a word; returns that peer's index."""


@dataclass(slots=True)
class FifoPoll:
    """Non-blocking :class:`AwaitFifo`: a peer with queued words, or None."""


@dataclass(slots=True)
class IoRegRead:
    index: int


@dataclass(slots=True)
class IoRegWrite:
    index: int
    value: int


@dataclass(slots=True)
class IoRegClean:
    index: int


@dataclass(slots=True)
class AwaitIoReg:
    """Poll the status register until a register in ``mask`` is dirty."""

    mask: int


@dataclass(slots=True)
class SpadRead:
    line: int
    offset: int = 0
    size: int = 128


@dataclass(slots=True)
class SpadWrite:
    line: int
    offset: int
    data: bytes


@dataclass(slots=True)
class Now:
    pass


@dataclass(slots=True)
class Exit:
    code: int = 0


class GlobalCounter:
    """Shared 64-bit counter; stamps are strictly increasing across all MCCs."""

    def __init__(self):
        self.last = 0

    def stamp(self, time_ns: float) -> int:
        value = int(time_ns * 1000)  # picosecond resolution
        if value <= self.last:
            value = self.last + 1
        self.last = value
        return value


class ScratchpadLine:
    __slots__ = ("read_ts", "write_ts", "lock", "pending", "ack", "filling", "draining")

    def __init__(self):
        self.read_ts = 0
        self.write_ts = 0
        self.lock = LockState.UNLOCKED
        self.pending: deque = deque()
        self.ack: Optional[Callable] = None
        self.filling = 0   # far->spad copies in flight
        self.draining = 0  # spad->far copies in flight


class ChannelProgram:
    """Base class for channel programs.

    Subclasses implement :meth:`run` as a generator of guest actions.  The
    ``binary_size`` attribute feeds the spawn-time model.
    """

    binary_size = 4096
    name = "cp"

    def run(self, ctx: "MccContext"):
        raise NotImplementedError
        yield  # pragma: no cover

    # stepping interface for drivers that are not the event loop
    def bind(self, ctx: "MccContext") -> None:
        self._gen = self.run(ctx)
        self._started = False

    def step(self, result: Any = None):
        if not self._started:
            self._started = True
            return next(self._gen)
        return self._gen.send(result)


class FunctionProgram(ChannelProgram):
    def __init__(self, fn: Callable, *args, binary_size: int = 4096, name: str | None = None):
        self.fn = fn
        self.args = args
        self.binary_size = binary_size
        self.name = name or fn.__name__

    def run(self, ctx):
        return (yield from self.fn(ctx, *self.args))


@dataclass
class MccContext:
    index: int
    n_mcc: int
    config: Any
    mcc: "Mcc"

    @property
    def peers(self) -> list[int]:
        return [i for i in range(self.n_mcc) if i != self.index]


class Mcc:
    """One memory channel controller and its core."""

    def __init__(self, system, index: int):
        self.system = system
        self.index = index
        cfg = system.config
        self.cfg = cfg
        self.engine: Engine = system.engine
        self.mem = system.mem
        self.counters = system.counters
        self.line_bytes = cfg["mem.line_bytes"]
        self.spad = bytearray(SPAD_LINES * self.line_bytes)
        self.lines = [ScratchpadLine() for _ in range(SPAD_LINES)]
        self.notifier: deque = deque()
        self.notifier_depth = cfg["mcc.notifier_depth"]
        self.pending_depth = cfg["mcc.pending_depth"]
        self.regs = [0] * N_IOREGS
        self.dirty = 0
        self.fifo_cap = cfg["mcc.fifo_words"]
        self.inbox: dict[int, deque] = {}
        self.counter = system.global_counter
        self.core = Agent(self.engine, f"mcc{index}", cfg["mcc.freq_hz"], cfg["sim.quantum_ns"])
        self.core.daemon = True
        c = self.core.cycle_ns
        self.cost = {
            "spad": cfg["mcc.costs.spad"] * c,
            "lock": cfg["mcc.costs.lock"] * c,
            "notify": cfg["mcc.costs.notify"] * c,
            "fifo": cfg["mcc.costs.fifo"] * c,
            "ioreg": cfg["mcc.costs.ioreg"] * c,
            "copy_issue": cfg["mcc.costs.copy_issue"] * c,
            "poll": cfg["mcc.costs.poll"] * c,
            "dispatch": cfg["mcc.costs.dispatch"] * c,
        }
        self.port_ns = cfg["mmio.port_ns"]
        self.mmio_port_free = 0.0
        self._ts_waiters: list = []
        self._notify_waiter = False
        self._fifo_waiter = False
        self._recv_waiters: dict[int, bool] = {}
        self._send_waiters: dict[int, deque] = {}
        self._reg_waiter: Optional[tuple] = None
        self.program: Optional[ChannelProgram] = None
        self.exit_code: Optional[int] = None
        self.busy = False
        self.staged: Optional[ChannelProgram] = None
        self.staged_verify = True
        self.log: Optional[list] = None
        h = self.core._handlers
        for cls, fn in (
            (Compute, self._compute), (CopyStart, self._copy_start), (CopyDone, self._copy_done),
            (ReadTs, self._read_ts), (AwaitTs, self._await_ts), (Lock, self._lock),
            (Unlock, self._unlock), (Release, self._release), (AwaitNotify, self._await_notify),
            (PopNotify, self._pop_notify), (FifoSend, self._fifo_send), (FifoRecv, self._fifo_recv),
            (AwaitFifo, self._await_fifo), (FifoPoll, self._fifo_poll), (Stamp, self._stamp), (IoRegRead, self._ioreg_read),
            (IoRegWrite, self._ioreg_write), (IoRegClean, self._ioreg_clean),
            (AwaitIoReg, self._await_ioreg), (SpadRead, self._spad_read),
            (SpadWrite, self._spad_write), (Now, self._now), (Exit, self._exit),
        ):
            h[cls] = fn

    # -- program lifecycle ------------------------------------------------------------
    def run_cp(self, program: ChannelProgram, at: Optional[float] = None) -> None:
        if self.busy:
            raise SpawnError(f"mcc{self.index} is busy")
        self.busy = True
        self.program = program
        self.exit_code = None
        self.error = None
        self.core.busy_ns = 0.0
        self.core.idle_ns = 0.0
        ctx = MccContext(self.index, len(self.system.mccs), self.cfg, self)
        self.core.on_exit = [self._on_exit]
        self.core.t = max(self.core.t, self.engine.now, at or 0.0)
        self.core.t += self.cost["dispatch"]
        self.core.busy_ns += self.cost["dispatch"]
        self.core.start(program.run(ctx))

    def _on_exit(self, agent: Agent) -> None:
        self.busy = False
        if agent.error is not None:
            self.exit_code = -1
            self.error = agent.error
            self.regs[ERROR_REG] = 1
            self._set_dirty(ERROR_REG)
        elif self.exit_code is None:
            self.exit_code = 0 if agent.result is None else int(agent.result)
        self.regs[DONE_REG] = (self.exit_code & 0xFFFF_FFFF) + 1
        self._unlock_all(agent.t)

    def _unlock_all(self, t: float) -> None:
        """Program exit drops every lock and serves what was queued behind it."""
        for i, ln in enumerate(self.lines):
            if ln.lock is not LockState.UNLOCKED:
                ln.lock = LockState.UNLOCKED
                self._serve(i, t)

    def terminate(self) -> None:
        """Forcibly stop the running channel program (reprogramming)."""
        core = self.core
        if core.gen is None:
            return
        gen = core.gen
        core.on_exit = []
        core._finish(None, None)
        gen.close()
        self.busy = False
        self.exit_code = -2
        self._ts_waiters.clear()
        self._notify_waiter = False
        self._fifo_waiter = False
        self._recv_waiters.clear()
        self._reg_waiter = None
        self._unlock_all(self.core.t)

    @property
    def busy_cycles(self) -> float:
        return self.core.busy_ns / self.core.cycle_ns

    @property
    def idle_cycles(self) -> float:
        return self.core.idle_ns / self.core.cycle_ns

    def _spend(self, ns: float) -> None:
        self.core.t += ns
        self.core.busy_ns += ns

    # -- scratchpad data helpers (no timing) ----------------------------------------------
    def line_bytes_at(self, line: int) -> bytes:
        off = line * self.line_bytes
        return bytes(self.spad[off:off + self.line_bytes])

    def store_line(self, line: int, data) -> None:
        off = line * self.line_bytes
        self.spad[off:off + self.line_bytes] = bytes(data).ljust(self.line_bytes, b"\0")[: self.line_bytes]

    # -- handlers -------------------------------------------------------------------
    def _compute(self, a: Compute):
        if a.cycles < 0:
            raise ValueError("negative cycles")
        self._spend(a.cycles * self.core.cycle_ns)
        return None

    def _now(self, a: Now):
        return self.core.t

    def _exit(self, a: Exit):
        self.exit_code = a.code
        gen = self.core.gen
        self.core._finish(a.code, None)
        gen.close()
        return BLOCK

    def _copy_start(self, a: CopyStart):
        cmds = a.commands
        if isinstance(cmds, CopyCommand):
            cmds = (cmds,)
        lines = self.lines
        for cmd in cmds:
            fill = cmd.direction == FAR_TO_SPAD
            for i in range(cmd.spad_index, cmd.spad_index + cmd.line_count):
                ln = lines[i]
                if ln.filling or (fill and ln.draining):
                    raise OverlapError(f"mcc{self.index}: conflicting copy in flight on line {i}")
            self.mem.far.check(cmd.far_line_addr, cmd.line_count * self.line_bytes)
        batch = []
        last = self.core.t
        for cmd in cmds:
            self._spend(self.cost["copy_issue"])
            fill = cmd.direction == FAR_TO_SPAD
            for i in range(cmd.spad_index, cmd.spad_index + cmd.line_count):
                if fill:
                    lines[i].filling += 1
                else:
                    lines[i].draining += 1
            snapshot = None
            if not fill:
                off = cmd.spad_index * self.line_bytes
                snapshot = bytes(self.spad[off:off + cmd.line_count * self.line_bytes])
            done = self.mem.copy_lines("read" if fill else "write", cmd.far_line_addr, cmd.line_count, self.core.t)
            if a.group:
                batch.append((cmd, snapshot))
                last = max(last, done)
            else:
                self.engine.at(done, self._copy_complete, ((cmd, snapshot),))
        if batch:
            self.engine.at(last, self._copy_complete, batch)
        return None

    def _copy_complete(self, batch) -> None:
        lb = self.line_bytes
        far = self.mem.far
        stamp = self.counter.stamp(self.engine.now)
        for cmd, snapshot in batch:
            fill = cmd.direction == FAR_TO_SPAD
            for i in range(cmd.line_count):
                idx = cmd.spad_index + i
                addr = cmd.far_line_addr + i * lb
                ln = self.lines[idx]
                if fill:
                    off = addr - far.base
                    self.spad[idx * lb:(idx + 1) * lb] = far.buf[off:off + lb]
                    ln.read_ts = stamp
                    ln.filling -= 1
                else:
                    far.commit_line(addr, snapshot[i * lb:(i + 1) * lb])
                    ln.write_ts = stamp
                    ln.draining -= 1
                if cmd.notify:
                    req = Req.COPY_READ_DONE if fill else Req.COPY_WRITE_DONE
                    self._push_notify(NotifierEvent(idx, req))
        if self._ts_waiters:
            self._check_ts_waiters()

    def _ts(self, line: int, which: str) -> int:
        ln = self.lines[line]
        if which == "read":
            return ln.read_ts
        if which == "write":
            return ln.write_ts
        raise ValueError(f"bad timestamp selector {which!r}")

    @sync
    def _copy_done(self, a: CopyDone):
        if not 0 <= a.line < SPAD_LINES:
            raise IndexError("scratchpad line out of range")
        self._spend(self.cost["spad"])
        return self._ts(a.line, a.which) > a.since

    @sync
    def _stamp(self, a: Stamp):
        self._spend(self.cost["spad"])
        return self.counter.last

    def _read_ts(self, a: ReadTs):
        self._spend(self.cost["spad"])
        return self._ts(a.line, a.which)

    @sync
    def _await_ts(self, a: AwaitTs):
        lines = (a.lines,) if isinstance(a.lines, int) else tuple(a.lines)
        self._spend(self.cost["spad"])
        if all(self._ts(l, a.which) > a.since for l in lines):
            return None
        self._ts_waiters.append((lines, a.which, a.since, self.core.t))
        return BLOCK

    def _check_ts_waiters(self) -> None:
        keep = []
        for entry in self._ts_waiters:
            lines, which, since, t0 = entry
            if all(self._ts(l, which) > since for l in lines):
                poll = self.cost["poll"]
                waited = self.engine.now - t0
                wake = t0 + math.ceil(waited / poll - 1e-9) * poll
                self.core.wake(None, at=wake, busy=True)
            else:
                keep.append(entry)
        self._ts_waiters = keep

    # -- locks & CPU requests ---------------------------------------------------------
    @sync
    def _lock(self, a: Lock):
        self._spend(self.cost["lock"])
        ln = self.lines[a.line]
        if ln.lock is not LockState.UNLOCKED:
            raise LockStateError(f"line {a.line} already locked")
        ln.lock = LockState.READ if a.mode == "read" else LockState.WRITE
        return None

    @sync
    def _unlock(self, a: Unlock):
        self._spend(self.cost["lock"])
        ln = self.lines[a.line]
        if ln.lock is LockState.UNLOCKED:
            raise LockStateError(f"line {a.line} is not locked")
        ln.lock = LockState.UNLOCKED
        self._serve(a.line, self.core.t)
        return None

    @sync
    def _release(self, a: Release):
        self._spend(self.cost["lock"])
        ln = self.lines[a.line]
        if ln.lock is LockState.UNLOCKED:
            raise LockStateError(f"line {a.line} is not locked")
        self._serve(a.line, self.core.t, keep_lock=True)
        return None

    def _serve(self, line: int, t: float, keep_lock: bool = False) -> None:
        """Complete deferred CPU requests on ``line`` at time ``t``."""
        ln = self.lines[line]
        if ln.ack is not None:
            ack, ln.ack = ln.ack, None
            ack(t)
        while ln.pending:
            kind, payload, cb = ln.pending[0]
            if kind == "write" and keep_lock and ln.lock is LockState.WRITE and ln.ack is None:
                # a queued write becomes the next stored-and-held write
                ln.pending.popleft()
                self._store_cpu_write(line, payload, cb)
                break
            if keep_lock and kind == "write" and ln.lock is LockState.READ:
                break
            ln.pending.popleft()
            if kind == "read":
                cb(t, self.line_bytes_at(line))
                if keep_lock and ln.lock is LockState.READ:
                    # one delivery per release on a read-locked line
                    break
            else:
                self.store_line(line, payload)
                cb(t)
        if self.log is not None:
            self.log.append(("serve", t, line))

    def _store_cpu_write(self, line: int, payload, ack: Callable) -> None:
        self.store_line(line, payload)
        self.lines[line].ack = ack
        self._push_notify(NotifierEvent(line, Req.CPU_WRITE))

    def cpu_read(self, line: int, cb: Callable) -> None:
        """CPU line read arriving now; ``cb(t, data)`` fires when served."""
        ln = self.lines[line]
        t = self.engine.now + self.system.spad_access_ns
        if ln.lock is LockState.READ:
            self._defer(ln, ("read", None, cb))
            self._push_notify(NotifierEvent(line, Req.CPU_READ))
        elif ln.ack is not None or ln.pending:
            self._defer(ln, ("read", None, cb))
        else:
            cb(t, self.line_bytes_at(line))

    def cpu_write(self, line: int, payload, cb: Callable) -> None:
        """CPU line write arriving now; ``cb(t)`` is the write acknowledgement."""
        ln = self.lines[line]
        t = self.engine.now + self.system.spad_access_ns
        if ln.lock is LockState.WRITE and ln.ack is None and not ln.pending:
            self._store_cpu_write(line, payload, cb)
        elif ln.lock is LockState.UNLOCKED and ln.ack is None and not ln.pending:
            self.store_line(line, payload)
            cb(t)
        else:
            self._defer(ln, ("write", payload, cb))

    def _defer(self, ln: ScratchpadLine, req) -> None:
        if len(ln.pending) >= self.pending_depth:
            self.counters.stall_ns["spad_pending_overflow"] = self.counters.stall_ns.get("spad_pending_overflow", 0) + 1
        ln.pending.append(req)

    # -- notifier ---------------------------------------------------------------------
    def _push_notify(self, ev: NotifierEvent) -> None:
        if len(self.notifier) >= self.notifier_depth:
            raise NotifierOverflow(f"mcc{self.index}: notifier queue overflow at line {ev.line}")
        self.notifier.append(ev)
        if self._notify_waiter:
            self._notify_waiter = False
            self.core.wake(self.notifier.popleft(), at=self.engine.now + self.cost["notify"])

    @sync
    def _await_notify(self, a: AwaitNotify):
        if self.notifier:
            self._spend(self.cost["notify"])
            return self.notifier.popleft()
        self._notify_waiter = True
        return BLOCK

    @sync
    def _pop_notify(self, a: PopNotify):
        self._spend(self.cost["notify"])
        return self.notifier.popleft() if self.notifier else None

    # -- inter-MCC FIFOs -----------------------------------------------------------------
    def fifo_to(self, peer: int) -> deque:
        return self.system.mccs[peer].inbox.setdefault(self.index, deque())

    @sync
    def _fifo_send(self, a: FifoSend):
        if a.peer == self.index:
            raise ValueError("cannot send to self")
        words = a.word if isinstance(a.word, tuple) else (a.word,)
        if len(words) > self.fifo_cap:
            raise ValueError("message larger than the FIFO")
        self._spend(self.cost["fifo"] * len(words))
        q = self.fifo_to(a.peer)
        if len(q) + len(words) > self.fifo_cap:
            if not a.block:
                return False
            self.system.mccs[a.peer]._send_waiters.setdefault(self.index, deque()).append(words)
            return BLOCK
        for w in words:
            self._deliver(a.peer, w)
        return True

    def _deliver(self, peer: int, word: int) -> None:
        target = self.system.mccs[peer]
        q = target.inbox.setdefault(self.index, deque())
        q.append(word & 0xFFFF_FFFF_FFFF_FFFF)
        self.counters.fifo_words += 1
        at = self.engine.now + self.system.fifo_latency_ns
        if target._recv_waiters.get(self.index):
            target._recv_waiters[self.index] = False
            target.core.wake(q.popleft(), at=at)
            target._unblock_sender(self.index)
        elif target._fifo_waiter:
            target._fifo_waiter = False
            target.core.wake(self.index, at=at)

    def fifo_blocked(self) -> bool:
        """Waiting on a FIFO.  Only channel programs feed FIFOs, so at quiescence this is a deadlock."""
        return (self.busy and (self._fifo_waiter or any(self._recv_waiters.values())
                               or any(self._send_waiters.values())))

    def _unblock_sender(self, peer: int) -> None:
        waiters = self._send_waiters.get(peer)
        if waiters and len(self.inbox[peer]) + len(waiters[0]) <= self.fifo_cap:
            words = waiters.popleft()
            sender = self.system.mccs[peer]
            for w in words:
                sender._deliver(self.index, w)
            sender.core.wake(True)

    @sync
    def _fifo_recv(self, a: FifoRecv):
        self._spend(self.cost["fifo"])
        q = self.inbox.get(a.peer)
        if q:
            word = q.popleft()
            self._unblock_sender(a.peer)
            return word
        if not a.block:
            return None
        self._recv_waiters[a.peer] = True
        return BLOCK

    @sync
    def _await_fifo(self, a: AwaitFifo):
        for peer in sorted(self.inbox):
            if self.inbox[peer]:
                return peer
        self._fifo_waiter = True
        return BLOCK

    @sync
    def _fifo_poll(self, a: FifoPoll):
        self._spend(self.cost["spad"])
        for peer in sorted(self.inbox):
            if self.inbox[peer]:
                return peer
        return None

    # -- I/O registers -----------------------------------------------------------------
    def _set_dirty(self, index: int) -> None:
        self.dirty |= 1 << index
        w = self._reg_waiter
        if w is not None and w[0] & (1 << index):
            self._reg_waiter = None
            poll = self.cost["ioreg"] + self.cost["poll"]
            t0 = w[1]
            wake = t0 + math.ceil((self.engine.now - t0) / poll - 1e-9) * poll + self.cost["ioreg"]
            self.core.wake(index, at=wake, busy=True)

    def status_word(self) -> int:
        return self.dirty

    def cpu_reg_write(self, index: int, value: int) -> None:
        if index == CTRL_REG:
            self.system.firmware_control(self, value)
            return
        self.regs[index] = value
        self._set_dirty(index)

    def cpu_reg_read(self, index: int) -> int:
        if index == STATUS_REG:
            return self.dirty
        return self.regs[index]

    @sync
    def _ioreg_read(self, a: IoRegRead):
        self._spend(self.cost["ioreg"])
        if a.index == STATUS_REG:
            return self.dirty
        return self.regs[a.index]

    @sync
    def _ioreg_write(self, a: IoRegWrite):
        self._spend(self.cost["ioreg"])
        self.regs[a.index] = a.value
        return None

    @sync
    def _ioreg_clean(self, a: IoRegClean):
        self._spend(self.cost["ioreg"])
        self.dirty &= ~(1 << a.index)
        return None

    @sync
    def _await_ioreg(self, a: AwaitIoReg):
        self._spend(self.cost["ioreg"])
        hits = self.dirty & a.mask
        if hits:
            return (hits & -hits).bit_length() - 1
        self._reg_waiter = (a.mask, self.core.t)
        return BLOCK

    # -- scratchpad access -----------------------------------------------------------------
    def _spad_read(self, a: SpadRead):
        self._spend(self.cost["spad"] * max(1, -(-a.size // 8)))
        off = a.line * self.line_bytes + a.offset
        return bytes(self.spad[off:off + a.size])

    def _spad_write(self, a: SpadWrite):
        self._spend(self.cost["spad"] * max(1, -(-len(a.data) // 8)))
        off = a.line * self.line_bytes + a.offset
        self.spad[off:off + len(a.data)] = a.data
        return None

    # -- spawn ------------------------------------------------------------------------------
    def spawn_time_ns(self, size: int, verify: bool, jitter: float = 0.0) -> float:
        cfg = self.cfg
        if size < 0 or size > cfg["spawn.max_bytes"]:
            raise SpawnError(f"channel block of {size} bytes exceeds the spawn budget")
        t = cfg["spawn.base_ns"] + size * cfg["spawn.copy_ns_per_byte"]
        if verify:
            t += size * cfg["spawn.verify_ns_per_byte"]
        return t * (1.0 + jitter)


def spawn_receive(mcc: Mcc, cb_bytes: int, verify: bool, jitter: float = 0.0) -> float:
    """Time for ``mcc`` to install a channel block of ``cb_bytes``; returns ready ack time."""
    return mcc.engine.now + mcc.spawn_time_ns(cb_bytes, verify, jitter)
