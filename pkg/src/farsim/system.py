"""Assembly of a simulated node: engine, memory, MCCs and host cores."""

from __future__ import annotations

from typing import Callable, Optional

from .config import Config, MemParams
from .host import CpuCore, HostContext, firmware_control
from .mcc import GlobalCounter, Mcc
from .mem import MemorySystem, PerfCounters
from .sim import DeadlockError, Engine, RunStats


class System:
    def __init__(self, config: Optional[Config] = None, trace: bool = False):
        self.config = config or Config()
        cfg = self.config
        self.engine = Engine(trace=trace)
        self.counters = PerfCounters()
        self.params = MemParams.from_config(cfg)
        self.mem = MemorySystem(self.params, cfg["mem.far_bytes"], cfg["mem.local_bytes"], self.counters)
        self.global_counter = GlobalCounter()
        self.spad_access_ns = cfg["spad.access_ns"]
        self.fifo_latency_ns = cfg["mcc.fifo_latency_ns"]
        self.spawn_count = 0
        self.mccs = [Mcc(self, i) for i in range(cfg["mcc.count"])]
        self.cores = [CpuCore(self, i) for i in range(cfg["cpu.cores"])]

    def firmware_control(self, mcc: Mcc, value: int) -> None:
        firmware_control(mcc, value)

    def host(self, fn: Callable, *args, core: int = 0, at: Optional[float] = None) -> CpuCore:
        """Start host program ``fn(ctx, *args)`` (a generator) on ``core``."""
        c = self.cores[core]
        c.start(fn(HostContext(self, c), *args), at)
        return c

    def run(self, until: Optional[float] = None) -> RunStats:
        stats = self.engine.run_until(until)
        if until is None:
            stuck = [f"mcc{m.index}:{getattr(m.program, 'name', type(m.program).__name__)}"
                     for m in self.mccs if m.fifo_blocked()]
            if stuck:
                raise DeadlockError(stuck)
        for agent in self.engine.agents:
            if agent.error is not None and not agent.daemon:
                raise agent.error
        return stats

    @property
    def now(self) -> float:
        return self.engine.now
