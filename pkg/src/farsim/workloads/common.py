"""Shared plumbing for workloads: reports, errors and system construction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

from ..config import Config
from ..system import System


class CorrectnessError(RuntimeError):
    """A workload produced a result that disagrees with its oracle."""


class ProtocolError(RuntimeError):
    """A distributed protocol invariant was violated."""


@dataclass
class WorkloadReport:
    workload: str
    variant: str
    params: dict
    elapsed_ns: float
    throughput: float
    unit: str
    counters: dict
    checksum: Any
    mcc_busy_cycles: list = field(default_factory=list)
    mcc_idle_cycles: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        c = self.counters
        return {
            "workload": self.workload,
            "variant": self.variant,
            **{f"p_{k}": v for k, v in sorted(self.params.items())},
            "sim_ns": self.elapsed_ns,
            "throughput": self.throughput,
            "unit": self.unit,
            "link_bytes": c.get("link_bytes", 0),
            "ddr_bytes": c.get("ddr_bytes", 0),
            "fifo_words": c.get("fifo_words", 0),
            "pipe_lines": c.get("pipe_lines", 0),
            "checksum": self.checksum,
        }


def make_system(config: Optional[Config] = None, **overrides) -> System:
    """A fresh system; ``overrides`` use ``mem__llc_bytes`` style keys."""
    cfg = config or Config()
    if overrides:
        cfg = cfg.replace(**overrides)
    return System(cfg)


def report(system: System, workload: str, variant: str, params: dict, elapsed: float,
           throughput: float, unit: str, checksum: Any, **extra) -> WorkloadReport:
    return WorkloadReport(
        workload=workload,
        variant=variant,
        params=dict(params),
        elapsed_ns=elapsed,
        throughput=throughput,
        unit=unit,
        counters=system.counters.snapshot(),
        checksum=checksum,
        mcc_busy_cycles=[m.busy_cycles for m in system.mccs],
        mcc_idle_cycles=[m.idle_cycles for m in system.mccs],
        extra=extra,
    )


def run_to_end(system: System) -> None:
    """Run to quiescence and surface channel-program faults."""
    system.run()
    for m in system.mccs:
        if m.exit_code == -1 and getattr(m, "error", None) is not None:
            raise m.error
