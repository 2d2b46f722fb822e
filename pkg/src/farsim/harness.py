"""Run specifications, the workload registry and CSV rows.

A :class:`RunSpec` names a workload, a variant, the workload's parameters,
a seed and config overrides.  Executing it yields one or more rows with a
fixed column order per workload; every row carries the spec hash so a row
can be matched to the spec that reproduces it.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

from . import graphs
from .config import Config, ConfigError, parse_assignments
from .workloads import (TreeSpec, gen_tree, run_bulk, run_db_filter, run_db_sum, run_gups, run_pagerank,
                        run_pipe_bench, run_uts, selectivity_bounds)
from .workloads.pagerank import scaling_reports

BASE_COLUMNS = ("spec_hash", "workload", "variant")
METRIC_COLUMNS = ("sim_ns", "throughput", "link_bytes", "ddr_bytes", "fifo_words", "pipe_lines", "checksum", "seed")


class UsageError(ValueError):
    """Unknown workload, variant or parameter."""


@dataclass(frozen=True)
class Param:
    kind: type
    default: Any
    help: str = ""

    def parse(self, raw) -> Any:
        if isinstance(raw, self.kind) and not isinstance(raw, bool):
            return raw
        try:
            return self.kind(int(float(raw)) if self.kind is int else raw)
        except (TypeError, ValueError):
            raise UsageError(f"expected {self.kind.__name__}, got {raw!r}") from None


@dataclass(frozen=True)
class Workload:
    name: str
    variants: tuple[str, ...]
    params: dict[str, Param]
    run: Callable[["RunSpec", Config], list[tuple[str, dict, Any, dict]]]
    extra_columns: tuple[str, ...] = ()

    @property
    def columns(self) -> tuple[str, ...]:
        return BASE_COLUMNS + tuple(self.params) + METRIC_COLUMNS + self.extra_columns


@dataclass(frozen=True)
class RunSpec:
    workload: str
    variant: str
    params: dict = field(default_factory=dict)
    seed: int = 1
    overrides: dict = field(default_factory=dict)

    def canonical(self) -> str:
        return json.dumps({"workload": self.workload, "variant": self.variant, "params": self.params,
                           "seed": self.seed, "overrides": self.overrides}, sort_keys=True)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    @classmethod
    def from_json(cls, text: str) -> "RunSpec":
        d = json.loads(text)
        return cls(d["workload"], d["variant"], d.get("params", {}), d.get("seed", 1), d.get("overrides", {}))

    def config(self) -> Config:
        return Config({**self.overrides, "sim.seed": self.seed})


def load_graph(spec: str, seed: int) -> graphs.CsrGraph:
    """``kron:SCALE:EF``, ``grid:W:H``, ``urand:N:M``, ``clustered:N:M:LOC`` or a file path."""
    kind, _, rest = spec.partition(":")
    args = rest.split(":") if rest else []
    try:
        if kind == "kron" and len(args) == 2:
            return graphs.gen_kronecker(int(args[0]), int(args[1]), seed)
        if kind == "grid" and len(args) == 2:
            return graphs.gen_grid(int(args[0]), int(args[1]))
        if kind == "urand" and len(args) == 2:
            return graphs.gen_urand(int(args[0]), int(args[1]), seed)
        if kind == "clustered" and len(args) == 3:
            return graphs.gen_clustered(int(args[0]), int(args[1]), float(args[2]), seed)
    except ValueError as exc:
        raise UsageError(f"bad graph spec {spec!r}: {exc}") from None
    if not os.path.exists(spec):
        raise UsageError(f"unknown graph {spec!r}")
    with open(spec, "rb") as fh:
        magic = fh.read(4)
    return graphs.read_csr(spec) if magic == graphs.MAGIC else graphs.load_edge_list(spec)


def _one(variant, params, rep, **extra):
    return [(variant, params, rep, extra)]


def _pipe(spec, cfg):
    p = spec.params
    rep = run_pipe_bench(spec.variant, p["threads"], p["units"], lines=p["lines"], regs=p["regs"], config=cfg,
                         seed=spec.seed)
    return _one(spec.variant, p, rep)


def _bulk(spec, cfg):
    p = spec.params
    return _one(spec.variant, p, run_bulk(p["op"], p["size"], spec.variant, config=cfg, seed=spec.seed))


def _gups(spec, cfg):
    p = spec.params
    rep = run_gups(p["table_bytes"], p["updates"], spec.variant, config=cfg, seed=spec.seed,
                   llc_bytes=p["llc_bytes"] or None)
    return _one(spec.variant, p, rep)


def _db_sum(spec, cfg):
    p = spec.params
    return _one(spec.variant, p, run_db_sum(p["rows"], p["row_bytes"], spec.variant, config=cfg, seed=spec.seed))


def _db_filter(spec, cfg):
    p = spec.params
    lo, hi = selectivity_bounds(p["selectivity"])
    rep = run_db_filter(p["rows"], p["row_bytes"], lo, hi, spec.variant, config=cfg, seed=spec.seed)
    return _one(spec.variant, p, rep, matches=rep.checksum)


def _uts(spec, cfg):
    p = spec.params
    tree = gen_tree(TreeSpec(p["branching"], p["depth"], spec.seed))
    rep = run_uts(tree, spec.variant, config=cfg, n_mcc=p["n_mcc"])
    return _one(spec.variant, p, rep, visit_spread=rep.extra.get("visit_spread", ""))


def _pagerank(spec, cfg):
    p = spec.params
    g = load_graph(p["graph"], spec.seed)
    rep = run_pagerank(g, p["iters"], spec.variant, p["pipe"], n_cpu=p["n_cpu"], n_mcc=p["n_mcc"], config=cfg)
    return _one(spec.variant, p, rep, contrib_link_bytes=rep.extra["contrib_link_bytes"],
                linf_error=rep.extra["linf_error"])


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from None


def _scaling(spec, cfg):
    p = spec.params
    g = load_graph(p["graph"], spec.seed)
    reps = scaling_reports(g, _int_list(p["cpus"]), _int_list(p["mccs"]), p["iters"], cfg)
    base = reps[(1, 0)].elapsed_ns
    out = []
    for (c, k), rep in reps.items():
        out.append((rep.variant, p, rep, {"n_cpu": c, "n_mcc": k, "speedup": base / rep.elapsed_ns}))
    return out


P = Param
WORKLOADS: dict[str, Workload] = {w.name: w for w in (
    Workload("pipe-bench", ("cl", "reg"),
             {"threads": P(int, 1), "units": P(int, 2000, "lines (cl) or words (reg) per thread"),
              "lines": P(int, 8), "regs": P(int, 8)}, _pipe),
    Workload("bulk", ("cpu", "cp"), {"op": P(str, "memcpy"), "size": P(int, 65536)}, _bulk),
    Workload("gups", ("cpu_local", "cpu_far", "mcc"),
             {"table_bytes": P(int, 1 << 18), "updates": P(int, 20000), "llc_bytes": P(int, 0, "0 = desk default")},
             _gups),
    Workload("db-sum", ("cpu", "mcc"), {"rows": P(int, 8192), "row_bytes": P(int, 128)}, _db_sum),
    Workload("db-filter", ("cpu", "mcc_copy", "mcc_streamed"),
             {"rows": P(int, 8192), "row_bytes": P(int, 128), "selectivity": P(float, 0.1)}, _db_filter,
             ("matches",)),
    Workload("uts", ("cpu_dfs_local", "cpu_dfs_far", "cpu_far_pf", "cpu_far_pf_x4", "mcc_single", "mcc_x4"),
             {"branching": P(float, 4.0), "depth": P(int, 10), "n_mcc": P(int, 4)}, _uts, ("visit_spread",)),
    Workload("pagerank", ("cpu_local", "cpu_far", "cpu_far_pf", "cpu_mcc"),
             {"graph": P(str, "kron:16:16"), "iters": P(int, 1), "pipe": P(str, "cl"), "n_cpu": P(int, 1),
              "n_mcc": P(int, 4)}, _pagerank, ("contrib_link_bytes", "linf_error")),
    Workload("scaling-grid", ("grid",),
             {"graph": P(str, "kron:16:16"), "iters": P(int, 1), "cpus": P(str, "1,2,3,4"),
              "mccs": P(str, "0,1,2,3,4")}, _scaling, ("n_cpu", "n_mcc", "speedup")),
)}


def make_spec(workload: str, variant: str, params: Optional[dict] = None, seed: int = 1,
              overrides: Optional[dict] = None) -> RunSpec:
    """Validate and fill defaults; raises :class:`UsageError`."""
    w = WORKLOADS.get(workload)
    if w is None:
        raise UsageError(f"unknown workload {workload!r}; choose from {', '.join(WORKLOADS)}")
    if variant not in w.variants:
        raise UsageError(f"{workload}: unknown variant {variant!r}; choose from {', '.join(w.variants)}")
    params = dict(params or {})
    unknown = set(params) - set(w.params)
    if unknown:
        raise UsageError(f"{workload}: unknown parameter(s) {', '.join(sorted(unknown))}")
    resolved = {name: p.parse(params[name]) if name in params else p.default for name, p in w.params.items()}
    try:
        Config(overrides or {})
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    return RunSpec(workload, variant, resolved, int(seed), dict(sorted((overrides or {}).items())))


def execute(spec: RunSpec) -> list[dict]:
    """Run one spec; rows in the workload's column order."""
    w = WORKLOADS[spec.workload]
    rows = []
    try:
        results = w.run(spec, spec.config())
    except ValueError as exc:
        if isinstance(exc, (UsageError, ConfigError)):
            raise
        raise UsageError(f"{spec.workload}: {exc}") from None
    for variant, params, rep, extra in results:
        c = rep.counters
        row = {"spec_hash": spec.hash, "workload": spec.workload, "variant": variant, **params,
               "sim_ns": rep.elapsed_ns, "throughput": rep.throughput, "link_bytes": c["link_bytes"],
               "ddr_bytes": c["ddr_bytes"], "fifo_words": c["fifo_words"], "pipe_lines": c["pipe_lines"],
               "checksum": rep.checksum, "seed": spec.seed, **extra}
        rows.append({k: row.get(k, "") for k in w.columns})
    return rows


def execute_all(specs: list[RunSpec], jobs: int = 1) -> list[dict]:
    """Rows of every spec, in spec order whatever order the workers finish in."""
    if jobs <= 1 or len(specs) <= 1:
        return [r for s in specs for r in execute(s)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return [r for rows in pool.map(execute, specs) for r in rows]


def format_rows(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


_POW_RANGE = re.compile(r"^2\^(\d+)\s*\.\.\s*2\^(\d+)$")


def _expand(value: str) -> list[str]:
    m = _POW_RANGE.match(value.strip())
    if m:
        return [str(1 << e) for e in range(int(m.group(1)), int(m.group(2)) + 1)]
    return [v.strip() for v in value.split(",") if v.strip()]


def parse_sweep(lines: Iterable[str], source: str = "<sweep>") -> list[RunSpec]:
    """Expand a sweep file into specs (cartesian product, file order).

    ``workload`` names the workload; ``variant``, ``seed`` and any parameter
    take comma lists or ``2^a..2^b``; ``set.KEY`` sets a config override.
    """
    axes: dict[str, list[str]] = {}
    overrides: dict[str, str] = {}
    workload = None
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise UsageError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (t.strip() for t in text.split("=", 1))
        if key == "workload":
            workload = value
        elif key.startswith("set."):
            overrides[key[4:]] = value
        else:
            axes[key] = _expand(value)
    if workload is None:
        raise UsageError(f"{source}: no workload given")
    try:
        cfg_over = parse_assignments([f"{k} = {v}" for k, v in overrides.items()], source)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    names = list(axes)
    specs = []
    for combo in itertools.product(*(axes[n] for n in names)):
        d = dict(zip(names, combo))
        variant = d.pop("variant", None)
        if variant is None:
            raise UsageError(f"{source}: no variant given")
        seed = d.pop("seed", 1)
        specs.append(make_spec(workload, variant, d, int(seed), cfg_over))
    return specs
