"""Command-line interface: ``hetvar analyze | simulate | plot``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import report
from .simulation import ConfigError, GridConfig, full_grid, read_rows, write_rows


def _list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def cmd_analyze(args) -> int:
    data = report.read_dataset(args.input)
    text = report.analyze(
        data,
        estimators=_list(args.estimators) if args.estimators is not None else report.DEFAULT_ESTIMATORS,
        intervals=_list(args.intervals) if args.intervals is not None else report.DEFAULT_INTERVALS,
        policy=args.policy, mode=args.mode, level=args.level, source=Path(args.input).name)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_simulate(args) -> int:
    grid = GridConfig.from_file(args.config)
    if args.reps is not None:
        grid.reps = args.reps
    if args.seed is not None:
        grid.seed = args.seed
    cells = grid.cells()  # validates reps/seed before any work starts

    def progress(i, n, cell):
        print(f"[{i}/{n}] k={cell.k} sizes={cell.sizes} p_c={cell.p_c:g} theta={cell.theta:g} "
              f"tau2={cell.tau2:g} reps={cell.reps}", file=sys.stderr, flush=True)

    if args.out:
        rows = full_grid(grid, args.out, progress=progress)
    else:
        rows = full_grid(grid, None, progress=progress)
        write_rows("/dev/stdout", rows)
    failed = [r for r in rows if r.errors]
    for r in failed:
        print(f"warning: {r.method}-{r.policy} failed on {r.errors} replicates in cell {r.cell_key}",
              file=sys.stderr)
    print(f"{len(cells)} cells, {len(rows)} rows", file=sys.stderr)
    return 0


def cmd_plot(args) -> int:
    rows = read_rows(args.input)
    facet = tuple(_list(args.facet))
    if len(facet) != 2:
        raise ValueError("--facet takes two comma-separated fields: rows,columns")
    paths = report.plot_metric(rows, args.metric, args.out, level=args.level, facet=facet)
    for p in paths:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetvar", description="Heterogeneity variance estimation for log-odds-ratios.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="estimate tau^2 for a CSV of 2x2 tables")
    p.add_argument("--input", required=True, help="CSV with columns study_id,x_t,n_t,x_c,n_c")
    p.add_argument("--estimators", help="comma-separated estimator ids (default: all)")
    p.add_argument("--intervals", help="comma-separated interval ids (default: all)")
    p.add_argument("--policy", choices=("only", "always"), default="only")
    p.add_argument("--mode", choices=("model", "naive"), default="model")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="run a simulation grid from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="metrics CSV (resumed if it exists)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plot", help="SVG panel figures from a metrics CSV")
    p.add_argument("--input", required=True, help="metrics CSV written by 'simulate'")
    p.add_argument("--metric", required=True, choices=report.METRICS)
    p.add_argument("--facet", default="sizes_label,k", help="panel rows,columns (default sizes_label,k)")
    p.add_argument("--level", type=float, default=0.95, help="nominal level for the coverage reference line")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, report.InputError, ValueError, OSError) as exc:
        print(f"hetvar {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
