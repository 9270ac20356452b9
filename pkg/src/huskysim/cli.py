"""Command line entry point.

    huskysim run <scenario> [<scenario> ...] [--out DIR] [--morph-trace] [--jobs N]
    huskysim summarize <trajectory.csv>
    huskysim plotdata <trajectory.csv> --channels roll,pitch,thr_FL
    huskysim design sweep <budget-file> --mt 0,0.1,0.2
    huskysim design report [<budget-file>] [--thrust-kgf 13.4]

A scenario is a path to an INI file or the name of a bundled one
(``huskysim run fig3_mission``).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import design, harness


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {exc}") from None


def _print_errors(errors) -> None:
    for e in errors:
        print(f"config error: {e}", file=sys.stderr)


def cmd_run(args) -> int:
    try:
        paths = [harness.resolve_scenario(s) for s in args.scenario]
    except harness.ScenarioError as exc:
        _print_errors(exc.errors)
        return harness.EXIT_CONFIG
    if len(paths) == 1:
        try:
            cfg = harness.load_scenario(paths[0])
            out = Path(args.out) if args.out else None
            summary = harness.run_scenario(cfg, out, morph_trace=args.morph_trace)
        except harness.ScenarioError as exc:
            _print_errors(exc.errors)
            return harness.EXIT_CONFIG
        print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
        return summary.exit_code
    # batch: every scenario gets its own directory under --out
    root = Path(args.out or "runs")
    results = harness.run_batch(paths, root, jobs=args.jobs, morph_trace=args.morph_trace)
    worst = 0
    for path, code in results:
        print(f"{Path(path).stem}: exit {code} -> {root / Path(path).stem}")
        worst = max(worst, code)
    return worst


def cmd_summarize(args) -> int:
    try:
        summary = harness.summarize(args.log)
    except (harness.LogParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_plotdata(args) -> int:
    channels = [c.strip() for c in (args.channels or "").split(",") if c.strip()]
    try:
        paths = harness.emit_plotdata(args.log, channels, args.out)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return harness.EXIT_CONFIG
    except (harness.LogParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    for p in paths:
        print(p)
    return 0


def cmd_design_sweep(args) -> int:
    try:
        _, template = design.load_design_file(args.budget)
        rows = design.tradeoff_sweep(template, args.mt)
    except (design.DesignError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    design.sweep_to_csv(rows, sys.stdout)
    return 0


def cmd_design_report(args) -> int:
    try:
        budget = design.MassBudget.from_file(args.budget) if args.budget else design.MassBudget()
        report = design.vehicle_thrust_to_weight(budget, args.thrust_kgf * design.G)
    except (design.DesignError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    print(f"repurposed_mass_kg = {design.repurposed_mass(budget):.4f}")
    for line in report.lines():
        print(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="huskysim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one or more scenarios")
    r.add_argument("scenario", nargs="+", help="scenario file or bundled scenario name")
    r.add_argument("--out", help="output directory (per-scenario subdirectories in batch mode)")
    r.add_argument("--morph-trace", action="store_true", help="log guard values every row")
    r.add_argument("--jobs", type=int, default=1, help="concurrent scenarios in batch mode")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("summarize", help="recompute the summary of a trajectory log")
    s.add_argument("log")
    s.set_defaults(func=cmd_summarize)

    pd = sub.add_parser("plotdata", help="write (t, value) CSVs for selected channels")
    pd.add_argument("log")
    pd.add_argument("--channels", default="", help="comma-separated channel names")
    pd.add_argument("--out", help="output directory (default: <log dir>/plotdata)")
    pd.set_defaults(func=cmd_plotdata)

    d = sub.add_parser("design", help="mass-budget and tradeoff analysis")
    dsub = d.add_subparsers(dest="design_command", required=True)
    sw = dsub.add_parser("sweep", help="tradeoff table over thruster masses, CSV on stdout")
    sw.add_argument("budget", help="budget file with a [budget] and optional [design] section")
    sw.add_argument("--mt", type=_parse_floats, required=True, help="thruster masses in kg, e.g. 0,0.1,0.2")
    sw.set_defaults(func=cmd_design_sweep)
    rep = dsub.add_parser("report", help="repurposed mass and thrust-to-weight with its aggregation")
    rep.add_argument("budget", nargs="?", help="budget file (default: built-in mass table)")
    rep.add_argument("--thrust-kgf", type=float, default=design.MAX_THRUST_KGF)
    rep.set_defaults(func=cmd_design_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("config error: --jobs must be >= 1", file=sys.stderr)
        return harness.EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
