"""Command-line entry point: ``fdmc estimate <scenario.json> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from fdmc.errors import NumericalError, ScenarioError
from fdmc.scenario import emit_plot_data, emit_results, parse_scenario, results_csv, run_benchmark, shipped_scenario

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

log = logging.getLogger("fdmc")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdmc", description="Collision-probability estimation by MC and FDMC.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    est = sub.add_parser("estimate", help="run the estimators on a scenario")
    est.add_argument("scenario", help="scenario JSON file; bare names of bundled scenarios also work")
    est.add_argument("--method", choices=["mc", "fdmc", "both"], default="both")
    est.add_argument("--trials", type=int, help="override the trial count M")
    est.add_argument("--seed", type=int, help="override the seed")
    est.add_argument("--out", help="write results here (default: stdout)")
    est.add_argument("--format", choices=["csv", "json"], default="csv")
    est.add_argument("--plot-data", metavar="DIR", help="write figure CSV series into DIR")
    est.add_argument("--workers", type=int, default=1, help="worker threads per estimator")
    est.add_argument("--exact-step", action="store_true", help="exact Gaussian transitions in MC")
    return parser


def _read_scenario(name: str) -> str:
    path = Path(name)
    if not path.exists() and path.parent == Path("."):
        bundled = shipped_scenario(name)
        if bundled is not None:
            path = bundled
    try:
        return path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read scenario {path}: {exc.strerror or exc}") from exc


def _estimate(args) -> int:
    sc = parse_scenario(_read_scenario(args.scenario))
    if args.trials is not None and args.trials < 1:
        raise ScenarioError(f"trial count must be positive, got {args.trials}", field="trials")
    if args.workers < 1:
        raise ScenarioError(f"worker count must be positive, got {args.workers}", field="workers")
    overrides = {"trials": args.trials, "seed": args.seed}
    if args.exact_step:
        overrides["exact_step"] = True
    sc = sc.with_overrides(**overrides)
    methods = ("mc", "fdmc") if args.method == "both" else (args.method,)

    report = run_benchmark(sc, methods, workers=args.workers)
    if args.out:
        emit_results(report, args.format, args.out)
    elif args.format == "csv":
        sys.stdout.write(results_csv(report))
    else:
        sys.stdout.write(json.dumps(report.to_dict(), indent=2) + "\n")
    if args.plot_data:
        emit_plot_data(sc, report, args.plot_data)

    for name, res in report.results.items():
        print(
            f"{name}: cp={res.cp:.6g} +/- {res.ci_halfwidth:.3g} ({res.confidence:.0%}), "
            f"{res.points_used} points, {res.wall_time_s:.3f} s",
            file=sys.stderr,
        )
    if report.speedup is not None:
        print(f"speedup: {report.speedup:.1f}x", file=sys.stderr)
    if report.retained_intervals:
        spans = ", ".join(f"[{a:.2f}, {b:.2f}]" for a, b in report.retained_intervals)
        print(f"retained intervals: {spans}", file=sys.stderr)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _estimate(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
