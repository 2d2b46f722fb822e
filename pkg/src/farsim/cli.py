"""``farsim`` command line: run, sweep, calibrate, report, selftest.

Exit status is 0 on success, 2 on usage errors (unknown workload,
variant, parameter or config key) and 3 when a workload's result disagrees
with its oracle.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .config import ConfigError, load_config, parse_assignments
from .graphs import GraphError
from .harness import WORKLOADS, UsageError, execute_all, format_rows, make_spec, parse_sweep
from .report import FIGURES, ReportError, emit_figure_data, read_csvs
from .workloads import CorrectnessError, ProtocolError

log = logging.getLogger("farsim")

EXIT_USAGE = 2
EXIT_CORRECTNESS = 3


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file (default: $FARSIM_CONFIG)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override, repeatable")


def _load(args):
    try:
        overrides = parse_assignments(args.set, "--set")
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    return load_config(args.config, overrides)


def _write(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="farsim", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one workload configuration")
    wsub = run.add_subparsers(dest="workload", required=True, metavar="WORKLOAD")
    for w in WORKLOADS.values():
        wp = wsub.add_parser(w.name, help=f"variants: {', '.join(w.variants)}")
        wp.add_argument("--variant", required=True, choices=w.variants)
        for name, param in w.params.items():
            flags = {f"--{name.replace('_', '-')}", f"--{name}"}
            wp.add_argument(*sorted(flags), dest=f"p_{name}", default=None, metavar=name.upper(),
                            help=f"{param.help + '; ' if param.help else ''}default {param.default}")
        wp.add_argument("--seed", type=int, default=1)
        wp.add_argument("--out", help="CSV path (default: stdout)")
        _config_args(wp)

    sw = sub.add_parser("sweep", help="run the cartesian product described by a sweep file")
    sw.add_argument("file")
    sw.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sw.add_argument("--out")
    _config_args(sw)

    cal = sub.add_parser("calibrate", help="solve memory parameters against the anchor points")
    cal.add_argument("--out", help="config file to write (default: stdout)")
    cal.add_argument("--pagerank", action="store_true", help="also re-solve the PageRank CPU edge cost")
    _config_args(cal)

    rep = sub.add_parser("report", help="figure-shaped tables and SVG charts from result CSVs")
    rep.add_argument("csv", nargs="+")
    rep.add_argument("--figure", required=True, choices=sorted(FIGURES))
    rep.add_argument("--svg", help="also write an SVG chart here")
    rep.add_argument("--out")

    st = sub.add_parser("selftest", help="run the acceptance criteria")
    st.add_argument("--only", default="", help="comma-separated criterion numbers")
    return ap


def cmd_run(args) -> int:
    cfg = _load(args)
    w = WORKLOADS[args.workload]
    params = {n: getattr(args, f"p_{n}") for n in w.params if getattr(args, f"p_{n}") is not None}
    spec = make_spec(w.name, args.variant, params, args.seed, cfg.non_defaults())
    log.info("spec %s %s", spec.hash, spec.canonical())
    _write(format_rows(execute_all([spec])), args.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    with open(args.file) as fh:
        specs = parse_sweep(fh, args.file)
    base = cfg.non_defaults()
    specs = [make_spec(s.workload, s.variant, s.params, s.seed, {**base, **s.overrides}) for s in specs]
    log.info("%d runs", len(specs))
    _write(format_rows(execute_all(specs, args.jobs)), args.out)
    return 0


def cmd_calibrate(args) -> int:
    from . import calibrate

    cfg, anchors = calibrate.solve(_load(args))
    if args.pagerank:
        cfg = cfg.merged({"wl.pr.cpu_edge_cycles": round(calibrate.solve_pagerank_edge_cycles(cfg), 1)})
    for name, ok in anchors.checks().items():
        print(f"{name} = {getattr(anchors, name):.6g} [{'ok' if ok else 'off'}]", file=sys.stderr)
    _write(cfg.dumps(), args.out)
    return 0 if anchors.ok else 1


def cmd_report(args) -> int:
    fig = emit_figure_data(read_csvs(args.csv), args.figure)
    text = fig.to_csv()
    for k, v in fig.annotations.items():
        text += f"# {k}: {v}\n"
    _write(text, args.out)
    if args.svg:
        with open(args.svg, "w") as fh:
            fh.write(fig.to_svg())
    return 0


def cmd_selftest(args) -> int:
    from .acceptance import run_all

    try:
        only = {int(x) for x in args.only.split(",") if x.strip()}
    except ValueError:
        raise UsageError(f"--only expects criterion numbers, got {args.only!r}") from None
    results = run_all(only, echo=lambda line: print(line, flush=True))
    return 0 if all(c.passed for c in results) else 1


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "calibrate": cmd_calibrate, "report": cmd_report,
            "selftest": cmd_selftest}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, ReportError, GraphError, FileNotFoundError) as exc:
        print(f"farsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorrectnessError, ProtocolError) as exc:
        print(f"farsim: correctness failure: {exc}", file=sys.stderr)
        return EXIT_CORRECTNESS
