"""Message pipes between host threads and channel programs.

Cache-line pipes use a ring of ``K`` scratchpad lines.  Each line carries a
sequence flag byte, a message-count byte and up to 126 payload bytes.  The
sender writes the payload and the flag last; a receiver ignores any line
whose flag is not the one it expects for that slot, which makes early
(partial) write-backs harmless.

Register pipes move one 64-bit word per I/O register write; the sender
polls the status register to learn which registers have been consumed.

Host-side endpoints expose generator methods (``yield from``) for host
programs; MCC-side endpoints do the same for channel programs.
"""

from __future__ import annotations

from collections import deque
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np

from . import host as H
from . import mcc as M
from .sim import RngStream

LINE = 128
HEADER = 2
PAYLOAD = LINE - HEADER
CLOSE_COUNT = 0xFF
REG_CLOSE = 26


class ClosedError(RuntimeError):
    pass


class EncodeError(ValueError):
    pass


class TornMessageError(RuntimeError):
    """A receiver consumed a line that was not completely written."""


def pack_messages(msgs: Sequence[bytes], msg_size: int) -> list[bytes]:
    """Pack fixed-size messages into line payloads, as many per line as fit."""
    if msg_size <= 0 or msg_size > PAYLOAD:
        raise EncodeError(f"message size {msg_size} does not fit a {PAYLOAD}-byte payload")
    per_line = PAYLOAD // msg_size
    out = []
    for i in range(0, len(msgs), per_line):
        chunk = msgs[i:i + per_line]
        for m in chunk:
            if len(m) != msg_size:
                raise EncodeError(f"message of {len(m)} bytes, expected {msg_size}")
        out.append(b"".join(chunk))
    return out


RECORD_IDS = 30


def pack_records(records: Iterable[tuple[int, Sequence[int]]]) -> list[tuple[int, bytes]]:
    """Pack ``(u, [v...])`` records as ``(count, payload)`` lines.

    A line holds one ``u`` and up to 30 ids; longer lists repeat ``u`` on
    each following line; an empty list emits nothing.  Ids are 32-bit.
    """
    out = []
    for u, vs in records:
        vs = np.asarray(vs, dtype="<u4")
        if not 0 <= u < 1 << 32:
            raise EncodeError(f"node id {u} does not fit 32 bits")
        head = int(u).to_bytes(4, "little")
        for i in range(0, len(vs), RECORD_IDS):
            part = vs[i:i + RECORD_IDS]
            out.append((len(part), head + part.tobytes()))
    return out


def decode_record(line: bytes) -> tuple[int, np.ndarray]:
    count = line[1]
    if count > RECORD_IDS:
        raise TornMessageError(f"record with {count} ids")
    u = int.from_bytes(line[HEADER:HEADER + 4], "little")
    return u, np.frombuffer(line, dtype="<u4", count=count, offset=HEADER + 4)


def encode_line(flag: int, count: int, payload: bytes) -> bytes:
    if len(payload) > PAYLOAD:
        raise EncodeError("payload exceeds line capacity")
    return bytes((flag, count)) + payload + bytes(PAYLOAD - len(payload))


def decode_line(line: bytes, msg_size: int) -> list[bytes]:
    count = line[1]
    return [line[HEADER + i * msg_size:HEADER + (i + 1) * msg_size] for i in range(count)]


def _seq(use: int) -> int:
    return use % 255 + 1


# -- CPU -> MCC over cache lines -------------------------------------------------------

class ClSender:
    """Host end of a CPU->MCC cache-line pipe on lines ``base .. base+K-1``."""

    def __init__(self, mcc: int, base: int, k: int, msg_size: int = 8, cpu_line_ns: float = 40.0,
                 torn_rate: float = 0.0, flagged: bool = True, seed: int = 1):
        self.mcc = mcc
        self.base = base
        self.k = k
        self.msg_size = msg_size
        self.cpu_line_ns = cpu_line_ns
        self.flagged = flagged
        self.torn_rate = torn_rate
        self.rng = RngStream(seed, f"torn/{mcc}/{base}")
        self.uses = [0] * k
        self.fills: list[Optional[H.Handle]] = [None] * k
        self.slot = 0
        self.closed = False
        self.lines_sent = 0
        self.torn_injected = 0

    def send_lines(self, payloads: Iterable[tuple[int, bytes]]):
        """Send ``(count, payload)`` lines in order."""
        if self.closed:
            raise ClosedError("pipe is closed")
        cycle = self.cpu_line_ns * 2.0  # cpu.freq 2 GHz: ns -> cycles
        for count, payload in payloads:
            s = self.slot
            line = self.base + s
            h = self.fills[s]
            if h is None:
                h = yield H.SpadLineRead(self.mcc, line)
            old = yield H.Await(h)
            flag = _seq(self.uses[s])
            self.uses[s] += 1
            data = encode_line(flag, count, payload)
            if self.torn_rate and self.rng.uniform() < self.torn_rate:
                # cache evicts the line after half the payload was written
                half = HEADER + PAYLOAD // 2
                torn = bytes(old[:1]) + data[1:half] + bytes(old[half:])
                self.torn_injected += 1
                yield H.SpadLineWrite(self.mcc, line, torn)
            yield H.Compute(cycle)
            yield H.SpadLineWrite(self.mcc, line, data)
            self.lines_sent += 1
            # the core asks for the line back right away for its next use
            self.fills[s] = yield H.SpadLineRead(self.mcc, line)
            self.slot = (s + 1) % self.k

    def send(self, msgs: Sequence[bytes]):
        per = PAYLOAD // self.msg_size
        lines = [(len(msgs[i:i + per]), p) for i, p in
                 zip(range(0, len(msgs), per), pack_messages(msgs, self.msg_size))]
        yield from self.send_lines(lines)

    def close(self):
        yield from self.send_lines([(CLOSE_COUNT, b"")])
        self.closed = True


class ClReceiver:
    """MCC end of a CPU->MCC cache-line pipe."""

    def __init__(self, base: int, k: int, msg_size: int = 8, recv_cycles: float = 27.4, flagged: bool = True,
                 decoder: Optional[Callable[[bytes], Any]] = None):
        self.base = base
        self.decoder = decoder
        self.k = k
        self.msg_size = msg_size
        self.recv_cycles = recv_cycles
        self.flagged = flagged
        self.expect = [1] * k
        self.held: dict[int, bytes] = {}
        self.next = 0
        self.closed = False
        self.lines = 0
        self.ignored = 0

    def owns(self, line: int) -> bool:
        return self.base <= line < self.base + self.k

    def open(self):
        for i in range(self.k):
            yield M.Lock(self.base + i, "write")

    def handle(self, ev: M.NotifierEvent, deliver: Callable[[list[bytes]], None]):
        """Consume one CpuWrite notification; ``deliver`` gets the messages.

        Lines are delivered in ring order.  A line whose predecessor was torn
        and rewritten can be notified ahead of it; it waits in ``held`` until
        its turn.  Returns the delivered lines' messages, one entry per line.
        """
        line = ev.line
        s = line - self.base
        data = yield M.SpadRead(line, 0, LINE)
        # notify + 16-word read + release are charged by their actions
        yield M.Compute(max(0.0, self.recv_cycles - 20.0))
        if self.flagged and data[0] != self.expect[s]:
            self.ignored += 1
            yield M.Release(line)
            return []
        self.expect[s] = self.expect[s] % 255 + 1
        self.lines += 1
        yield M.Release(line)
        if s in self.held:
            raise TornMessageError(f"line {line}: reused before its predecessor arrived")
        self.held[s] = data
        out = []
        while self.next in self.held:
            data = self.held.pop(self.next)
            self.next = (self.next + 1) % self.k
            if data[1] == CLOSE_COUNT:
                self.closed = True
                break
            if self.decoder is not None:
                msgs = self.decoder(data)
            elif data[1] * self.msg_size > PAYLOAD:
                raise TornMessageError(f"line {line}: bad message count {data[1]}")
            else:
                msgs = decode_line(data, self.msg_size)
            deliver(msgs)
            out.append(msgs)
        return out


# -- MCC -> CPU over cache lines -------------------------------------------------------

EMPTY, WANTED, FULL = 0, 1, 2


class ClProducer:
    """MCC end of an MCC->CPU cache-line pipe (read-locked ring)."""

    def __init__(self, base: int, k: int, msg_size: int = 8):
        self.base = base
        self.k = k
        self.msg_size = msg_size
        self.state = [EMPTY] * k
        self.uses = [0] * k
        self.slot = 0
        self.lines = 0

    def owns(self, line: int) -> bool:
        return self.base <= line < self.base + self.k

    def open(self):
        for i in range(self.k):
            yield M.Lock(self.base + i, "read")

    def on_read(self, ev: M.NotifierEvent):
        s = ev.line - self.base
        if self.state[s] == FULL:
            self.state[s] = EMPTY
            yield M.Release(ev.line)
        else:
            self.state[s] = WANTED

    def send_line(self, count: int, payload: bytes, dispatch: Callable):
        """Write one line; while the slot is still occupied, notifications go to ``dispatch``."""
        s = self.slot
        while self.state[s] == FULL:
            ev = yield M.AwaitNotify()
            yield from dispatch(ev)
        line = self.base + s
        flag = _seq(self.uses[s])
        self.uses[s] += 1
        yield M.SpadWrite(line, 0, encode_line(flag, count, payload))
        self.lines += 1
        if self.state[s] == WANTED:
            self.state[s] = EMPTY
            yield M.Release(line)
        else:
            self.state[s] = FULL
        self.slot = (s + 1) % self.k

    def send(self, msgs: Sequence[bytes], dispatch: Callable):
        per = PAYLOAD // self.msg_size
        for i, payload in zip(range(0, len(msgs), per), pack_messages(msgs, self.msg_size)):
            yield from self.send_line(len(msgs[i:i + per]), payload, dispatch)

    def close(self, dispatch: Callable):
        yield from self.send_line(CLOSE_COUNT, b"", dispatch)


class ClConsumer:
    """Host end of an MCC->CPU cache-line pipe; keeps every slot's read in flight."""

    def __init__(self, mcc: int, base: int, k: int, msg_size: int = 8):
        self.mcc = mcc
        self.base = base
        self.k = k
        self.msg_size = msg_size
        self.reads: list[Optional[H.Handle]] = [None] * k
        self.slot = 0
        self.closed = False
        self.expect = [1] * k

    def prime(self):
        for s in range(self.k):
            if self.reads[s] is None:
                self.reads[s] = yield H.SpadLineRead(self.mcc, self.base + s)

    def recv_line(self):
        """Next line as ``(count, data)``; ``None`` once the producer closed."""
        if self.closed:
            return None
        yield from self.prime()
        s = self.slot
        data = yield H.Await(self.reads[s])
        if data[0] != self.expect[s]:
            raise TornMessageError(f"slot {s}: flag {data[0]} != {self.expect[s]}")
        self.expect[s] = self.expect[s] % 255 + 1
        self.reads[s] = None
        self.slot = (s + 1) % self.k
        if data[1] == CLOSE_COUNT:
            self.closed = True
            return None
        self.reads[s] = yield H.SpadLineRead(self.mcc, self.base + s)
        return data

    def recv(self):
        data = yield from self.recv_line()
        if data is None:
            return None
        return decode_line(data, self.msg_size)


# -- CPU -> MCC over I/O registers ------------------------------------------------------

class RegSender:
    """Host end of a register pipe using data registers ``regs``."""

    def __init__(self, mcc: int, regs: Sequence[int]):
        self.mcc = mcc
        self.regs = list(regs)
        self.mask = sum(1 << r for r in self.regs)
        self.free = deque(self.regs)
        self.written: deque = deque()  # registers in write order
        self.in_use = 0
        self.closed = False

    def _poll(self):
        status = yield H.MmioRead(self.mcc, M.STATUS_REG)
        # reuse registers in the order they were written, so a receiver
        # reading in rotation sees the words in order
        keep = deque()
        for r in self.written:
            if status & (1 << r):
                keep.append(r)
            else:
                self.in_use &= ~(1 << r)
                self.free.append(r)
        self.written = keep

    def send(self, words: Iterable[int]):
        if self.closed:
            raise ClosedError("pipe is closed")
        for w in words:
            while not self.free:
                yield from self._poll()
            r = self.free.popleft()
            self.in_use |= 1 << r
            self.written.append(r)
            yield H.MmioWrite(self.mcc, r, int(w) & 0xFFFF_FFFF_FFFF_FFFF)

    def drain(self):
        """Wait until the MCC consumed every written register."""
        while self.in_use:
            yield from self._poll()

    def close(self):
        yield from self.drain()
        yield H.MmioWrite(self.mcc, REG_CLOSE, 1)
        self.closed = True


class RegReceiver:
    """MCC end of one or more register pipes."""

    def __init__(self, regs: Sequence[int], ordered: bool = False):
        """With ``ordered`` the registers are read in the sender's rotation,
        which preserves word order; otherwise the lowest dirty one wins."""
        self.regs = list(regs)
        self.mask = sum(1 << r for r in regs) | (1 << REG_CLOSE)
        self.ordered = ordered
        self.next = 0
        self.closed = False
        self.words = 0

    @property
    def wait_mask(self) -> int:
        if self.ordered:
            return (1 << self.regs[self.next]) | (1 << REG_CLOSE)
        return self.mask

    def take(self, r: int):
        """Consume register ``r`` after an :class:`AwaitIoReg` chose it."""
        value = yield M.IoRegRead(r)
        yield M.IoRegClean(r)
        if r == REG_CLOSE:
            self.closed = True
            return None
        if self.ordered:
            self.next = (self.next + 1) % len(self.regs)
        self.words += 1
        return value

    def recv(self):
        """Next word, or ``None`` after the sender closed."""
        if self.closed:
            return None
        return (yield from self.take((yield M.AwaitIoReg(self.wait_mask))))
