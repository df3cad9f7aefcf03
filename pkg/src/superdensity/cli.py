"""Command line entry point: ``superdensity``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, scenario, schwarz

EXIT_OK, EXIT_FAIL, EXIT_SCHEMA, EXIT_IO = 0, 1, 2, 3


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("path", help="scenario JSON file or bundled scenario name")
    p.add_argument("--out", help="output directory (overrides SUPERDENSITY_OUT and the scenario)")
    p.add_argument("--tol", type=float, help="quadrature tolerance for every task")
    p.add_argument("--max-depth", type=int, help="cell subdivision depth limit")
    p.add_argument("--seed", type=int, help="seed for sampled checks and Monte Carlo fallbacks")
    p.add_argument("--fail-fast", action="store_true", help="stop at the first failing task")
    p.add_argument("--jobs", type=int, default=1, help="run independent tasks in this many processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="superdensity", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario against the schema")
    p.add_argument("path")

    sub.add_parser("scenarios", help="list the bundled scenarios")

    _add_run_flags(sub.add_parser("run", help="run every task of a scenario"))

    sc = sub.add_parser("scatter", help="scattered-set tasks of a scenario")
    scs = sc.add_subparsers(dest="action", required=True)
    for action in ("build", "verify", "thin"):
        _add_run_flags(scs.add_parser(action))

    sw = sub.add_parser("schwarz", help="Schwarz estimator and the diagonal counterexample")
    sws = sw.add_subparsers(dest="action", required=True)
    _add_run_flags(sws.add_parser("check"))
    ce = sws.add_parser("counterexample")
    ce.add_argument("--jmax", type=int, default=10)
    ce.add_argument("--tol", type=float, default=1e-6)
    ce.add_argument("--out", help="CSV path (default: stdout)")
    return parser


def _validate(path: str) -> int:
    try:
        errors = scenario.validate_scenario(path)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    if errors:
        return EXIT_SCHEMA
    print("OK")
    return EXIT_OK


def _run(args, ops=None) -> int:
    try:
        res = scenario.run_scenario(args.path, out=args.out, tol=args.tol, max_depth=args.max_depth,
                                    seed=args.seed, fail_fast=args.fail_fast, jobs=args.jobs, ops=ops)
    except scenario.ScenarioError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    for t in res.summary["tasks"]:
        line = f"{t['verdict']:4s} {t['id']} ({t['op']})"
        if "error" in t:
            line += f": {t['error']}"
        print(line)
    print(f"report: {res.out / 'summary.json'}")
    return EXIT_OK if res.passed else EXIT_FAIL


def _counterexample(args) -> int:
    rows = [schwarz.diagonal_counterexample(j, args.tol) for j in range(1, args.jmax + 1)]
    try:
        if args.out:
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            schwarz.write_counterexample_csv(args.out, rows)
        else:
            print("j,value,bound")
            for r in rows:
                print(f"{r.j},{r.value!r},{r.bound!r}")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK if all(r.holds for r in rows) else EXIT_FAIL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        return _validate(args.path)
    if args.command == "scenarios":
        for name in scenario.BUNDLED:
            doc = json.loads(scenario.bundled_path(name).read_text())
            print(f"{name}: {doc.get('description', '')}")
        return EXIT_OK
    if args.command == "run":
        return _run(args)
    if args.command == "scatter":
        return _run(args, scenario.OP_GROUPS[f"scatter {args.action}"])
    if args.action == "check":
        return _run(args, scenario.OP_GROUPS["schwarz check"])
    return _counterexample(args)


if __name__ == "__main__":
    sys.exit(main())
