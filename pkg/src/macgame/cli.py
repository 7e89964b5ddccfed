"""Command line entry point.

    macgame analyze  <scenario.json> [...]
    macgame simulate <scenario.json> [...] --out <dir>
    macgame verify   <scenario.json> [...]

Exit codes: 0 all verdicts pass, 1 some verdict is false, 2 parse or
validation error, 3 numeric abort. Several files run as an isolated batch;
MACGAME_THREADS caps the parallelism.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .capacity import ScenarioError
from .numerics import NumericsError
from .scenario_io import parse_doc, parse_scenario, run

EXIT_OK = 0
EXIT_VERDICT_FALSE = 1
EXIT_PARSE = 2
EXIT_NUMERIC = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="macgame",
        description="Constrained multiple-access-channel games: analysis, "
                    "simulation and equilibrium verification.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("analyze", "simulate", "verify"):
        p = sub.add_parser(name)
        p.add_argument("files", nargs="+", help="scenario JSON files")
        p.add_argument("--out", default=None, help="output directory for artifacts")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--log-base", choices=["2", "e"], default=None,
                       help="override the scenario log base")
        p.add_argument("--tol", type=float, default=None,
                       help="override the scenario tolerance")
    return parser


def _run_one(path: str, args) -> int:
    try:
        sf = parse_scenario(path)
        if args.seed is not None or args.log_base is not None or args.tol is not None:
            doc = dict(sf.canonical)
            if args.seed is not None:
                doc["seed"] = args.seed
            if args.log_base is not None:
                doc["log_base"] = args.log_base
            if args.tol is not None:
                doc["tol"] = args.tol
            sf = parse_doc(doc, path)
        if sf.task != args.command:
            raise ScenarioError(
                f"{path}: scenario task {sf.task!r} does not match command {args.command!r}")
        out_dir = None
        if args.command == "simulate":
            base = Path(args.out) if args.out else Path("macgame_out")
            out_dir = base / Path(path).stem if len(args.files) > 1 else base
        report = run(sf, out_dir)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NumericsError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE

    text = report.to_json()
    if out_dir is not None:
        report_path = Path(out_dir) / "report.json"
        report_path.write_text(text, encoding="utf-8")
        print(f"{path}: report written to {report_path}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    print(f"{path}: wall clock {report.wall_clock_s:.3f} s", file=sys.stderr)
    return EXIT_OK if report.all_verdicts_pass else EXIT_VERDICT_FALSE


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    files = list(args.files)
    if len(files) == 1:
        return _run_one(files[0], args)
    max_threads = int(os.environ.get("MACGAME_THREADS", "0")) or min(len(files), os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=max_threads) as pool:
        codes = list(pool.map(lambda f: _run_one(f, args), files))
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
