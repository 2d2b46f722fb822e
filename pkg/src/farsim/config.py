"""Simulator configuration.

Configuration is a flat mapping of dotted keys (``mem.internal_latency_ns``)
to numbers or booleans.  Files use a line-oriented ``key = value`` format
with ``#`` comments; command-line overrides use the same ``key=value`` form.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Mapping

MiB = 1 << 20
KiB = 1 << 10

DEFAULTS: dict[str, float | int | bool] = {
    # far DRAM, link and CPU cache
    "mem.line_bytes": 128,
    "mem.internal_latency_ns": 238.0,
    "mem.external_latency_ns": 715.0,
    "mem.internal_bw": 17.5e9,
    "mem.external_bw": 9.1e9,
    "mem.local_latency_ns": 100.0,
    "mem.local_bw": 20e9,
    "mem.ddr_channels": 2,
    "mem.llc_bytes": 16 * MiB,
    "mem.llc_ways": 16,
    "mem.far_bytes": 64 * MiB,
    "mem.local_bytes": 16 * MiB,
    # host cores
    "cpu.cores": 1,
    "cpu.freq_hz": 2e9,
    "cpu.mlp": 8,
    "cpu.prefetch_slots": 32,
    "cpu.llc_hit_ns": 30.0,
    "cpu.flush_ns": 20.0,
    # uncached register access; only the round trip is measured
    "mmio.rtt_ns": 1200.0,
    "mmio.port_ns": 250.0,
    "mmio.write_core_ns": 271.0,
    # coherent CPU <-> scratchpad path (cache-line pipes)
    "spad.cpu_oneway_ns": 550.0,
    "spad.access_ns": 4.0,
    # memory channel controllers
    "mcc.count": 4,
    "mcc.freq_hz": 300e6,
    "mcc.notifier_depth": 64,
    "mcc.pending_depth": 8,
    "mcc.fifo_words": 1024,
    "mcc.fifo_latency_ns": 10.0,
    "mcc.costs.spad": 1.0,
    "mcc.costs.lock": 2.0,
    "mcc.costs.notify": 2.0,
    "mcc.costs.fifo": 4.0,
    "mcc.costs.ioreg": 9.0,
    "mcc.costs.copy_issue": 3.0,
    "mcc.costs.poll": 4.0,
    "mcc.costs.dispatch": 20.0,
    # spawn
    "spawn.verify": True,
    "spawn.base_ns": 380_000.0,
    "spawn.copy_ns_per_byte": 1.5,
    "spawn.verify_ns_per_byte": 36.0,
    "spawn.jitter": 0.02,
    "spawn.max_bytes": 32 * KiB,
    # pipes
    "pipe.lines": 8,
    "pipe.regs": 8,
    "pipe.reserved_bytes": 2,
    "pipe.schema.id_bits": 32,
    "pipe.torn_write_fault": False,
    "pipe.recv_cycles": 27.4,
    "pipe.cpu_line_ns": 40.0,
    # engine
    "sim.quantum_ns": 250.0,
    "sim.seed": 1,
    # workload inner-loop costs (cycles of the executing core)
    "wl.gups.cpu_cycles": 120.0,
    "wl.gups.mcc_cycles": 24.0,
    "wl.bulk.chunk_lines": 16,
    "wl.bulk.memset_word_cycles": 2.0,
    "wl.bulk.cpu_line_cycles": 16.0,
    "wl.db.chunk_lines": 32,
    "wl.db.cpu_row_cycles": 3.0,
    "wl.db.mcc_sum_row_cycles": 5.25,
    "wl.db.mcc_filter_row_cycles": 30.0,
    "wl.db.mcc_copy_match_cycles": 10.0,
    "wl.db.mcc_stream_match_cycles": 8.0,
    "wl.pr.cpu_edge_cycles": 60.0,
    "wl.pr.cpu_node_cycles": 10.0,
    "wl.pr.cpu_send_edge_cycles": 4.0,
    "wl.pr.cpu_msg_cycles": 160.0,
    "wl.pr.mcc_edge_cycles": 1.5,
    "wl.pr.mcc_msg_cycles": 8.0,
    "wl.pr.prefetch_distance": 32,
    "wl.uts.cpu_node_cycles": 40.0,
    "wl.uts.mcc_node_cycles": 40.0,
    "wl.uts.inflight": 8,
    # desk-scale cache sizes used by the harness for scaled-down workloads
    "desk.gups.llc_bytes": 1 * MiB,
    "desk.pr.llc_bytes": 16 * KiB,
    "desk.uts.llc_bytes": 256 * KiB,
    "desk.db.llc_bytes": 1 * MiB,
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str | float | int | bool):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            value = float(raw)
            if not value.is_integer():
                raise ConfigError(f"{key}: expected an integer, got {raw!r}")
            return int(value)
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None


class Config(Mapping):
    """Immutable mapping of dotted keys, defaulted from :data:`DEFAULTS`."""

    def __init__(self, overrides: Mapping | None = None):
        values = dict(DEFAULTS)
        for key, raw in (overrides or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, raw)
        self._values = values
        self._validate()

    def _validate(self):
        v = self._values
        if v["mem.external_latency_ns"] <= v["mem.internal_latency_ns"]:
            raise ConfigError("mem.external_latency_ns must exceed mem.internal_latency_ns")
        if v["mem.external_bw"] > v["mem.internal_bw"]:
            raise ConfigError("mem.external_bw must not exceed mem.internal_bw")
        line = v["mem.line_bytes"]
        if line <= 0 or line & (line - 1):
            raise ConfigError("mem.line_bytes must be a power of two")
        if v["mem.llc_bytes"] < line * v["mem.llc_ways"]:
            raise ConfigError("mem.llc_bytes too small for mem.llc_ways")

    def __getitem__(self, key):
        return self._values[key]

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def replace(self, **changes) -> "Config":
        """Return a copy with dotted keys given as ``mem__llc_bytes=...`` or a mapping."""
        merged = {k: v for k, v in self._values.items() if v != DEFAULTS[k]}
        for key, value in changes.items():
            merged[key.replace("__", ".")] = value
        return Config(merged)

    def merged(self, overrides: Mapping) -> "Config":
        merged = {k: v for k, v in self._values.items() if v != DEFAULTS[k]}
        merged.update(overrides)
        return Config(merged)

    def non_defaults(self) -> dict:
        return {k: v for k, v in sorted(self._values.items()) if v != DEFAULTS[k]}

    def dumps(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(self._values.items()))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value)


def parse_assignments(lines: Iterable[str], source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in text.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path: str | os.PathLike | None = None, overrides: Mapping | None = None) -> Config:
    """Load a config file (or ``$FARSIM_CONFIG``) and apply overrides on top."""
    values = {}
    if path is None:
        path = os.environ.get("FARSIM_CONFIG")
    if path:
        with open(path) as fh:
            values.update(parse_assignments(fh, str(path)))
    values.update(overrides or {})
    return Config(values)


@dataclass(frozen=True)
class MemParams:
    line_bytes: int
    internal_latency_ns: float
    external_latency_ns: float
    internal_bw_Bps: float
    external_bw_Bps: float
    local_latency_ns: float
    local_bw_Bps: float
    ddr_channels: int
    llc_bytes: int
    llc_ways: int
    llc_hit_ns: float
    mcc_freq_hz: float
    cpu_freq_hz: float
    cpu_mlp: int

    @classmethod
    def from_config(cls, cfg: Mapping) -> "MemParams":
        return cls(
            line_bytes=cfg["mem.line_bytes"],
            internal_latency_ns=cfg["mem.internal_latency_ns"],
            external_latency_ns=cfg["mem.external_latency_ns"],
            internal_bw_Bps=cfg["mem.internal_bw"],
            external_bw_Bps=cfg["mem.external_bw"],
            local_latency_ns=cfg["mem.local_latency_ns"],
            local_bw_Bps=cfg["mem.local_bw"],
            ddr_channels=cfg["mem.ddr_channels"],
            llc_bytes=cfg["mem.llc_bytes"],
            llc_ways=cfg["mem.llc_ways"],
            llc_hit_ns=cfg["cpu.llc_hit_ns"],
            mcc_freq_hz=cfg["mcc.freq_hz"],
            cpu_freq_hz=cfg["cpu.freq_hz"],
            cpu_mlp=cfg["cpu.mlp"],
        )

    @property
    def link_oneway_ns(self) -> float:
        # idle cpu-origin read = request leg + internal DDR path + response leg
        return (self.external_latency_ns - self.internal_latency_ns) / 2
