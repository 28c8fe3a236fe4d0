"""Command-line entry point: run / audit / stats."""

from __future__ import annotations

import argparse
import os
import sys

from . import harness


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fleetchain",
        description="Ledger-coordinated two-robot inspection simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario and write CSV/block-log outputs")
    p_run.add_argument("scenario", help="scenario YAML file")
    p_run.add_argument("--out", default=None,
                       help="output directory (default $FLEETCHAIN_OUT or ./out)")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--duration-ms", type=int, default=None,
                       help="override the scenario duration")

    p_audit = sub.add_parser("audit", help="verify an exported block log")
    p_audit.add_argument("blocklog", help="blocklog.ndhex file")
    p_audit.add_argument("--commits", default=None,
                         help="commits.csv to cross-check transaction accounting "
                              "(auto-detected next to the block log)")

    p_stats = sub.add_parser("stats", help="per-chaincode commit latency summaries")
    p_stats.add_argument("commits", help="commits.csv file")
    p_stats.add_argument("--chaincodes", default=",".join(harness.DEFAULT_CHAINCODES),
                         help="comma-separated chaincodes that must be present")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        out_dir = args.out or os.environ.get("FLEETCHAIN_OUT") or "out"
        return harness.run(args.scenario, out_dir, seed=args.seed,
                           duration_ms=args.duration_ms)
    if args.command == "audit":
        commits = args.commits
        if commits is None:
            sibling = os.path.join(os.path.dirname(os.path.abspath(args.blocklog)),
                                   "commits.csv")
            commits = sibling if os.path.exists(sibling) else None
        report = harness.audit(args.blocklog, commits_csv=commits)
        for prop, ok, detail in report.checks:
            print(f"{'PASS' if ok else 'FAIL'} {prop}: {detail}")
        return 0 if report.ok else 1
    if args.command == "stats":
        try:
            summaries = harness.stats(args.commits,
                                      tuple(args.chaincodes.split(",")))
        except harness.MissingChaincode as exc:
            print(f"error: {exc}")
            return 1
        print(f"{'chaincode':<16} {'n':>6} {'min':>8} {'q1':>8} {'median':>8} "
              f"{'q3':>8} {'max':>8} {'outliers':>9}")
        for s in summaries:
            print(f"{s.chaincode:<16} {s.n:>6} {s.min:>8g} {s.q1:>8g} {s.median:>8g} "
                  f"{s.q3:>8g} {s.max:>8g} {len(s.outliers):>9}")
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
