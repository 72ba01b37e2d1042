"""Command-line entry point: ``aqnet run|check|report``."""

from __future__ import annotations

import argparse
import logging
import sys

from .runner import read_summary, run
from .scenario import ScenarioError, load_scenario

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2

REPORT_KEYS = ("seed", "motes", "end_time_ms", "convergence_ms", "samples_generated",
               "samples_delivered", "completeness", "duplicates_suppressed", "stored_duplicates",
               "buffer_max_depth", "buffer_capacity", "shed_records", "journal_entries",
               "uploads_ok", "uploads_failed", "replays", "frame_delivery_rate", "result")


def _load(path: str):
    try:
        cfg = load_scenario(path)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None
    except ScenarioError as exc:
        print(f"{path}: {exc}", file=sys.stderr)
        return None
    for w in cfg.warnings:
        print(f"{path}: warning: {w}", file=sys.stderr)
    return cfg


def _print_summary(summary) -> None:
    for key in REPORT_KEYS:
        if key in summary:
            print(f"{key:>22}: {summary[key]}")


def cmd_run(args) -> int:
    cfg = _load(args.scenario)
    if cfg is None:
        return EXIT_CONFIG
    if args.seed is not None:
        cfg.seed = args.seed
    result = run(cfg, args.out)
    _print_summary(result.summary)
    for f in result.failures:
        print(f"FAIL {f}", file=sys.stderr)
    return EXIT_PASS if result.passed else EXIT_FAIL


def cmd_check(args) -> int:
    cfg = _load(args.scenario)
    if cfg is None:
        return EXIT_CONFIG
    print(f"{args.scenario}: ok ({len(cfg.nodes)} nodes, {len(cfg.radio_links())} links, "
          f"{len(cfg.outages)} outages, {len(cfg.assertions)} assertions)")
    return EXIT_PASS


def cmd_report(args) -> int:
    try:
        summary = read_summary(args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _print_summary(summary)
    return EXIT_PASS if summary.get("result") == "pass" else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aqnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and verify it")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True, help="directory for metrics, series and journal")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="parse and validate a scenario only")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("report", help="summarize a previous run")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
