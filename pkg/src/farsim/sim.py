"""Deterministic discrete-event engine.

Time is kept in nanoseconds as floats so that 300 MHz and 2 GHz cycle
lengths stay exact enough; ties are broken by insertion order.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Generator, Optional

import numpy as np

MASK64 = (1 << 64) - 1
TIME_CAP_NS = float(1 << 62)


class SimError(RuntimeError):
    pass


class DeadlockError(SimError):
    def __init__(self, blocked: list[str]):
        self.blocked = sorted(blocked)
        super().__init__("deadlock: blocked guests " + ", ".join(self.blocked))


@dataclass
class RunStats:
    events_fired: int
    final_time: float


class Engine:
    """Single-threaded event loop.

    ``schedule(delay, fn, *args)`` queues ``fn(*args)`` at ``now + delay``.
    Events at equal times run in the order they were scheduled.
    """

    def __init__(self, trace: bool = False):
        self.now = 0.0
        self._queue: list = []
        self._seq = 0
        self._running = False
        self.events_fired = 0
        self.agents: list["Agent"] = []
        self.trace: Optional[list] = [] if trace else None

    def schedule(self, delay: float, fn: Callable, *args) -> int:
        if not delay >= 0 or math.isinf(delay):
            raise ValueError(f"bad delay {delay!r}")
        return self.at(self.now + delay, fn, *args)

    def at(self, time: float, fn: Callable, *args) -> int:
        if time < self.now:
            time = self.now
        if time >= TIME_CAP_NS:
            raise SimError("simulation time cap exceeded")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, (time, seq, fn, args))
        return seq

    def pending(self) -> int:
        return len(self._queue)

    def run_until(self, limit: Optional[float] = None) -> RunStats:
        """Run events with ``fire_at <= limit`` (all events when ``limit`` is None).

        With ``limit=None`` the run ends at quiescence; if any registered guest
        is still blocked at that point a :class:`DeadlockError` is raised.
        """
        if self._running:
            raise SimError("engine already running")
        self._running = True
        fired = 0
        queue = self._queue
        trace = self.trace
        last = self.now
        try:
            while queue:
                if limit is not None and queue[0][0] > limit:
                    break
                time, seq, fn, args = heapq.heappop(queue)
                self.now = time
                if trace is not None:
                    trace.append((time, seq))
                fn(*args)
                fired += 1
                last = time
        finally:
            self._running = False
            self.events_fired += fired
        if limit is not None:
            if queue:
                self.now = max(self.now, limit)
                return RunStats(fired, limit)
            return RunStats(fired, last)
        blocked = [a.name for a in self.agents if a.blocked and not a.daemon]
        if blocked:
            raise DeadlockError(blocked)
        return RunStats(fired, last)


class BandwidthServer:
    """FIFO server with a fixed service rate in bytes per ns."""

    __slots__ = ("name", "rate", "next_free", "bytes_served", "requests")

    def __init__(self, name: str, rate_Bpns: float):
        if rate_Bpns <= 0:
            raise ValueError("rate must be positive")
        self.name = name
        self.rate = rate_Bpns
        self.next_free = 0.0
        self.bytes_served = 0
        self.requests = 0

    def request(self, arrival: float, nbytes: int) -> float:
        """Return the completion time of a transfer arriving at ``arrival``."""
        start = arrival if arrival > self.next_free else self.next_free
        done = start + nbytes / self.rate
        self.next_free = done
        self.bytes_served += nbytes
        self.requests += 1
        return done

    def occupy(self, arrival: float, nbytes: int) -> float:
        """Like :meth:`request` but returns the service start time."""
        start = arrival if arrival > self.next_free else self.next_free
        self.next_free = start + nbytes / self.rate
        self.bytes_served += nbytes
        self.requests += 1
        return start


def server_request(server: BandwidthServer, arrival: float, nbytes: int, rate: float | None = None) -> float:
    if rate is not None:
        if rate <= 0:
            raise ValueError("rate must be positive")
        server.rate = rate
    return server.request(arrival, nbytes)


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stable_hash(*parts) -> int:
    """64-bit hash of strings/ints that does not depend on PYTHONHASHSEED."""
    h = 0x6A09E667F3BCC908
    for part in parts:
        data = part.encode() if isinstance(part, str) else int(part).to_bytes(8, "little", signed=True)
        for i in range(0, len(data), 8):
            h = splitmix64(h ^ int.from_bytes(data[i:i + 8], "little"))
        h = splitmix64(h ^ len(data))
    return h


class RngStream:
    """Counter-based generator: value ``k`` is a pure function of (seed, stream, k)."""

    __slots__ = ("seed", "stream_id", "counter", "_key")

    def __init__(self, seed: int, stream_id: int | str = 0, counter: int = 0):
        if isinstance(stream_id, str):
            stream_id = stable_hash(stream_id)
        self.seed = seed & MASK64
        self.stream_id = stream_id & MASK64
        self.counter = counter
        self._key = splitmix64(self.seed ^ splitmix64(self.stream_id ^ 0xD1B54A32D192ED03))

    def u64(self) -> int:
        value = splitmix64(self._key ^ splitmix64(self.counter))
        self.counter += 1
        return value

    def uniform(self) -> float:
        return (self.u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        return self.u64() % n

    def numpy(self) -> np.random.Generator:
        """Bulk generator for data generation, keyed by the same (seed, stream)."""
        return np.random.Generator(np.random.Philox(key=[self.seed, self.stream_id]))


def rng_u64(stream: RngStream) -> int:
    return stream.u64()


BLOCK = object()


class Agent:
    """A guest-running core: drives a generator of actions on the engine.

    Agents keep a local clock ``t`` that may run ahead of ``engine.now`` by at
    most ``quantum`` for actions touching only private state; anything
    observing shared state first synchronizes the agent to engine time.
    """

    def __init__(self, engine: Engine, name: str, freq_hz: float, quantum: float = 250.0):
        self.engine = engine
        self.name = name
        self.freq = freq_hz
        self.cycle_ns = 1e9 / freq_hz
        self.quantum = quantum
        self.t = 0.0
        self.gen: Optional[Generator] = None
        self.blocked = False
        self.daemon = False
        self.done = False
        self.result: Any = None
        self.error: Optional[BaseException] = None
        self.busy_ns = 0.0
        self.idle_ns = 0.0
        self.on_exit: list[Callable] = []
        self._handlers: dict[type, Callable] = {}
        engine.agents.append(self)

    def start(self, gen: Generator, at: Optional[float] = None) -> None:
        self.gen = gen
        self.done = False
        self.blocked = True
        self.t = max(self.engine.now, at or 0.0, self.t)
        self.engine.at(self.t, self._resume, None)

    def cycles(self, n: float) -> float:
        return n * self.cycle_ns

    # -- scheduling helpers used by action handlers -------------------------
    def sync_needed(self) -> bool:
        return self.t > self.engine.now

    def wake(self, value: Any = None, at: Optional[float] = None, busy: bool = False) -> None:
        """Resume a blocked agent at ``at`` (default now) with ``value``."""
        when = self.engine.now if at is None else max(at, self.engine.now)
        if when < self.t:
            when = self.t
        gap = when - self.t
        if busy:
            self.busy_ns += gap
        else:
            self.idle_ns += gap
        self.t = when
        self.engine.at(when, self._resume, value)

    def _resume(self, value: Any) -> None:
        if self.gen is None:  # terminated while an event was queued
            return
        self.blocked = False
        if self.t < self.engine.now:
            self.idle_ns += self.engine.now - self.t
            self.t = self.engine.now
        self._loop(value)

    def _deferred(self, action) -> None:
        if self.gen is None:
            return
        self.blocked = False
        self._dispatch_first(action)

    def _dispatch_first(self, action) -> None:
        try:
            value = self._handlers[type(action)](action)
        except BaseException as exc:  # noqa: BLE001 - guest faults are routed into the guest
            value = _Throw(exc)
        if value is BLOCK:
            self.blocked = not self.done
            return
        self._loop(value)

    def _loop(self, value: Any) -> None:
        gen = self.gen
        handlers = self._handlers
        engine = self.engine
        while True:
            try:
                if isinstance(value, _Throw):
                    action = gen.throw(value.exc)
                else:
                    action = gen.send(value)
            except StopIteration as stop:
                self._finish(stop.value, None)
                return
            except BaseException as exc:  # noqa: BLE001
                self._finish(None, exc)
                return
            handler = handlers.get(type(action))
            if handler is None:
                value = _Throw(TypeError(f"{self.name}: unsupported action {action!r}"))
                continue
            if getattr(handler, "_sync", False) and self.t > engine.now:
                self.blocked = True
                engine.at(self.t, self._deferred, action)
                return
            try:
                value = handler(action)
            except BaseException as exc:  # noqa: BLE001
                value = _Throw(exc)
                continue
            if value is BLOCK:
                self.blocked = not self.done
                return
            if self.t - engine.now > self.quantum:
                self.blocked = True
                engine.at(self.t, self._resume, value)
                return

    def _finish(self, result: Any, error: Optional[BaseException]) -> None:
        self.done = True
        self.blocked = False
        self.result = result
        self.error = error
        self.gen = None
        for cb in list(self.on_exit):
            cb(self)


class _Throw:
    __slots__ = ("exc",)

    def __init__(self, exc: BaseException):
        self.exc = exc


def sync(fn: Callable) -> Callable:
    """Mark an action handler as needing the agent clock aligned to engine time."""
    fn._sync = True
    return fn


@dataclass
class Timeline:
    """Ordered (time, label) log used by tests and traces."""

    entries: list = field(default_factory=list)

    def add(self, time: float, label: Any) -> None:
        self.entries.append((time, label))
