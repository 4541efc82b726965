"""Command line entry point ``abpcheck``."""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .models import PROFILE_PRESETS
from .potential import DENSITY_PRESETS
from .report import FORMATS, ReportError, emit_report, render
from .runner import convergence_study, run_batch
from .submanifold import PATCH_PRESETS, SURFACE_FUNCTIONS

DOMAIN_THEOREMS = ("sobolev_domain", "isoperimetric")
PATCH_THEOREMS = ("michael_simon", "minimal_isoperimetric")


def _common(p):
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--out", help="report path; stdout when omitted")
    p.add_argument("--format", choices=FORMATS, default="csv")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, help="override the config thread count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abpcheck", description="Numerical checks of sharp Sobolev, isoperimetric "
                                     "and Michael-Simon inequalities on warped-product models.")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("check-sobolev", help="domain Sobolev and isoperimetric cases"))
    _common(sub.add_parser("check-michael-simon", help="submanifold cases"))
    _common(sub.add_parser("transport-experiment", help="volume capture, coverage, Jacobian and shell experiments"))
    p = sub.add_parser("convergence", help="mesh refinement study against the radial solution")
    _common(p)
    p.add_argument("--levels", type=float, nargs="+", default=[0.1, 0.05, 0.025])
    sub.add_parser("list-presets", help="list model, density and patch presets")
    return parser


def _write(rows, args) -> None:
    if args.out:
        emit_report(rows, args.out, args.format)
    else:
        sys.stdout.write(render(rows, args.format))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-presets":
        for title, table in (("profiles", PROFILE_PRESETS), ("densities", DENSITY_PRESETS),
                             ("patches", PATCH_PRESETS), ("surface functions", SURFACE_FUNCTIONS)):
            print(f"{title}: {', '.join(sorted(table))}")
        return 0
    try:
        run = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"abpcheck: {exc}", file=sys.stderr)
        return 2
    threads = args.threads or run.threads
    try:
        if args.command == "convergence":
            rows = [row for case in run.cases for row in convergence_study(case, args.levels)]
        else:
            if args.command == "check-sobolev":
                cases = [c for c in run.cases if c.theorem in DOMAIN_THEOREMS]
            elif args.command == "check-michael-simon":
                cases = [c for c in run.cases if c.theorem in PATCH_THEOREMS]
            else:
                cases = [c for c in run.cases if c.transport["r"]]
            if not cases:
                print(f"abpcheck: no cases for {args.command} in {args.config}", file=sys.stderr)
                return 2
            rows = run_batch(cases, threads, transport=args.command == "transport-experiment")
        _write(rows, args)
    except (ReportError, ValueError) as exc:
        print(f"abpcheck: {exc}", file=sys.stderr)
        return 2
    return 0 if all(row.status != "fail" for row in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
