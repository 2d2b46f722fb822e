"""Turn result CSVs into figure-shaped series and static SVG charts."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional
from xml.sax.saxutils import escape


class ReportError(ValueError):
    """Input rows cannot produce the requested figure."""


@dataclass
class FigureData:
    figure: str
    xlabel: str
    ylabel: str
    series: dict[str, list[tuple]] = field(default_factory=dict)
    annotations: dict = field(default_factory=dict)
    kind: str = "line"  # "stacked" or "grouped": x is a category, bars stack or sit side by side
    log_x: bool = False

    def rows(self) -> list[dict]:
        return [{"series": name, "x": x, "y": y} for name, pts in self.series.items() for x, y in pts]

    def to_csv(self) -> str:
        lines = ["series,x,y"]
        lines += [f"{r['series']},{r['x']},{r['y']!r}" for r in self.rows()]
        return "\n".join(lines) + "\n"

    def to_svg(self, width: int = 640, height: int = 400) -> str:
        return _svg_lines(self, width, height) if self.kind == "line" else _svg_bars(self, width, height)


def read_csvs(paths: Iterable[str]) -> list[dict]:
    rows = []
    for path in paths:
        with open(path, newline="") as fh:
            rows.extend(_numeric(r) for r in csv.DictReader(fh))
    return rows


def _numeric(row: dict) -> dict:
    out = {}
    for k, v in row.items():
        try:
            out[k] = int(v)
        except (TypeError, ValueError):
            try:
                out[k] = float(v)
            except (TypeError, ValueError):
                out[k] = v
    return out


def _select(rows: list[dict], workload: str, need: tuple[str, ...]) -> list[dict]:
    if not rows:
        raise ReportError("no rows")
    picked = [r for r in rows if r.get("workload") == workload]
    if not picked:
        raise ReportError(f"no {workload} rows")
    missing = [c for c in need if c not in picked[0]]
    if missing:
        raise ReportError(f"{workload} rows lack column(s): {', '.join(missing)}")
    return picked


def _by(rows, key_fn, x, y="throughput") -> dict[str, list[tuple]]:
    series = defaultdict(list)
    for r in rows:
        series[key_fn(r)].append((r[x], r[y]))
    return {k: sorted(v) for k, v in sorted(series.items())}


def _crossover(fast: list[tuple], slow: list[tuple]) -> Optional[float]:
    """Smallest x from which ``fast`` stays above ``slow``."""
    slow_at = dict(slow)
    xs = [x for x, _ in fast if x in slow_at]
    ys = dict(fast)
    for i, x in enumerate(xs):
        if all(ys[z] > slow_at[z] for z in xs[i:]):
            return x
    return None


def _pipes(rows):
    rows = _select(rows, "pipe-bench", ("variant", "threads", "throughput"))
    return FigureData("pipes", "threads", "MB/s", _by(rows, lambda r: f"{r['variant']} lines={r.get('lines')}"
                                                    if r["variant"] == "cl" else f"reg regs={r.get('regs')}",
                                                    "threads"))


def _bulk(rows):
    rows = _select(rows, "bulk", ("op", "size", "variant", "throughput"))
    fig = FigureData("bulk", "bytes", "GB/s", _by(rows, lambda r: f"{r['op']}/{r['variant']}", "size"), log_x=True)
    for op in sorted({r["op"] for r in rows}):
        cpu, cp = fig.series.get(f"{op}/cpu"), fig.series.get(f"{op}/cp")
        if cpu is None:
            raise ReportError(f"bulk: no cpu baseline rows for {op}")
        if cp is not None:
            fig.annotations[f"{op} crossover"] = _crossover(cp, cpu)
            base = dict(cpu)
            fig.annotations[f"{op} speedup"] = [(x, y / base[x]) for x, y in cp if x in base]
    return fig


def _gups(rows):
    rows = _select(rows, "gups", ("table_bytes", "variant", "throughput"))
    fig = FigureData("gups", "table bytes", "Mupdates/s", _by(rows, lambda r: r["variant"], "table_bytes"),
                     log_x=True)
    if "cpu_far" not in fig.series:
        raise ReportError("gups: no cpu_far baseline rows")
    if "mcc" in fig.series:
        fig.annotations["mcc overtakes cpu_far"] = _crossover(fig.series["mcc"], fig.series["cpu_far"])
    return fig


def _pr_label(r):
    return f"{r['variant']}/{r.get('pipe', 'cl')}" if r["variant"] == "cpu_mcc" else r["variant"]


def _pagerank_speedup(rows):
    rows = _select(rows, "pagerank", ("graph", "variant", "sim_ns"))
    series = defaultdict(list)
    for g in sorted({r["graph"] for r in rows}):
        mine = [r for r in rows if r["graph"] == g]
        base = [r for r in mine if r["variant"] == "cpu_far_pf"]
        if not base:
            raise ReportError(f"pagerank: no cpu_far_pf baseline for graph {g}")
        for r in mine:
            series[_pr_label(r)].append((g, base[0]["sim_ns"] / r["sim_ns"]))
    return FigureData("pagerank-speedup", "graph", "speedup vs cpu_far_pf", dict(series), kind="grouped")


def _pagerank_traffic(rows):
    rows = _select(rows, "pagerank", ("graph", "variant", "link_bytes", "ddr_bytes"))
    series = {"link_bytes": [], "ddr_bytes": []}
    for r in sorted(rows, key=lambda r: (r["graph"], _pr_label(r))):
        cat = f"{r['graph']}:{_pr_label(r)}"
        series["link_bytes"].append((cat, r["link_bytes"]))
        series["ddr_bytes"].append((cat, r["ddr_bytes"]))
    return FigureData("pagerank-traffic", "variant", "bytes", series, kind="stacked")


def _scaling(rows):
    rows = _select(rows, "scaling-grid", ("n_cpu", "n_mcc", "speedup"))
    if not any(r["n_cpu"] == 1 and r["n_mcc"] == 0 for r in rows):
        raise ReportError("scaling-grid: no (1 CPU, 0 MCC) baseline row")
    return FigureData("scaling-grid", "MCCs", "speedup", _by(rows, lambda r: f"{r['n_cpu']} cpu", "n_mcc", "speedup"))


def _db_sum(rows):
    rows = _select(rows, "db-sum", ("row_bytes", "variant", "throughput"))
    return FigureData("db-sum", "row bytes", "Mrows/s", _by(rows, lambda r: r["variant"], "row_bytes"), log_x=True)


def _db_filter(rows):
    rows = _select(rows, "db-filter", ("selectivity", "variant", "throughput"))
    return FigureData("db-filter", "selectivity", "Mrows/s", _by(rows, lambda r: r["variant"], "selectivity"))


FIGURES = {
    "pipes": _pipes, "bulk": _bulk, "gups": _gups, "db-sum": _db_sum, "db-filter": _db_filter,
    "pagerank-speedup": _pagerank_speedup, "pagerank-traffic": _pagerank_traffic, "scaling-grid": _scaling,
}


def emit_figure_data(rows: list[dict], figure: str) -> FigureData:
    if figure not in FIGURES:
        raise ReportError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    return FIGURES[figure](rows)


# -- SVG ----------------------------------------------------------------------------------

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
PAD = 60


def _text(x, y, s, anchor="middle", size=12):
    return f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" text-anchor="{anchor}">{escape(str(s))}</text>'


def _frame(fig, width, height):
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
            _text(width / 2, 20, fig.figure, size=14),
            _text(width / 2, height - 10, fig.xlabel),
            f'<text x="15" y="{height / 2:.1f}" font-size="12" text-anchor="middle" '
            f'transform="rotate(-90 15 {height / 2:.1f})">{escape(fig.ylabel)}</text>',
            f'<line x1="{PAD}" y1="{height - PAD}" x2="{width - 20}" y2="{height - PAD}" stroke="black"/>',
            f'<line x1="{PAD}" y1="30" x2="{PAD}" y2="{height - PAD}" stroke="black"/>']


def _svg_lines(fig, width, height):
    pts = [p for s in fig.series.values() for p in s]
    if not pts:
        raise ReportError(f"{fig.figure}: nothing to plot")
    fx = (lambda v: math.log2(v)) if fig.log_x else float
    xs = [fx(x) for x, _ in pts]
    x0, x1 = min(xs), max(xs)
    y1 = max(y for _, y in pts) or 1.0
    sx = lambda v: PAD + (fx(v) - x0) / ((x1 - x0) or 1) * (width - PAD - 30)
    sy = lambda v: height - PAD - v / y1 * (height - PAD - 40)
    out = _frame(fig, width, height)
    out.append(_text(PAD - 5, sy(y1) + 4, f"{y1:.3g}", "end", 10))
    out.append(_text(PAD - 5, height - PAD + 4, "0", "end", 10))
    for x in sorted({x for x, _ in pts}):
        out.append(_text(sx(x), height - PAD + 15, f"{x:g}" if isinstance(x, (int, float)) else x, size=10))
    for i, (name, s) in enumerate(fig.series.items()):
        colour = PALETTE[i % len(PALETTE)]
        path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in s)
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="2" points="{path}"/>')
        out.append(_text(width - 25, 40 + 15 * i, name, "end", 11).replace("<text", f'<text fill="{colour}"'))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _svg_bars(fig, width, height):
    cats = []
    for s in fig.series.values():
        for x, _ in s:
            if x not in cats:
                cats.append(x)
    if not cats:
        raise ReportError(f"{fig.figure}: nothing to plot")
    stacked = fig.kind == "stacked"
    totals = defaultdict(float)
    for s in fig.series.values():
        for x, y in s:
            totals[x] = totals[x] + y if stacked else max(totals[x], y)
    top = max(totals.values()) or 1.0
    bw = (width - PAD - 30) / len(cats)
    n = 1 if stacked else len(fig.series)
    sy = lambda v: v / top * (height - PAD - 40)
    out = _frame(fig, width, height)
    out.append(_text(PAD - 5, height - PAD - sy(top) + 4, f"{top:.3g}", "end", 10))
    base = defaultdict(float)
    for i, (name, s) in enumerate(fig.series.items()):
        colour = PALETTE[i % len(PALETTE)]
        for x, y in s:
            j = cats.index(x)
            h = sy(y)
            yb = height - PAD - base[x] - h
            w = (bw - 8) / n
            left = PAD + j * bw + 4 + (0 if stacked else i * w)
            out.append(f'<rect x="{left:.1f}" y="{yb:.1f}" width="{w:.1f}" height="{h:.1f}" fill="{colour}"/>')
            if stacked:
                base[x] += h
        out.append(_text(width - 25, 40 + 15 * i, name, "end", 11).replace("<text", f'<text fill="{colour}"'))
    for j, c in enumerate(cats):
        out.append(_text(PAD + (j + 0.5) * bw, height - PAD + 15, c, size=9))
    out.append("</svg>")
    return "\n".join(out) + "\n"
