"""Mission harness: run a scenario, audit a block log, summarize latency.

`run` drives a World to completion, checks the ledger's own invariants
(replay equivalence, loss-free commits, the latency bound) and writes
the six output files. `audit` re-verifies an exported block log from
nothing but the file: hash chain, replay equivalence via contract
re-execution, and transaction accounting. `stats` turns commit records
into per-chaincode box-plot statistics.
"""

from __future__ import annotations

import bisect
import csv
import os
from dataclasses import dataclass

import numpy as np

from . import canonical
from .canonical import DecodeError, serialize_state
from .chaincode import ContractError, TxContext, contract_for_chaincode
from .ledger import INVALIDATED, VALID, StateView, load_blocklog, replay_blocks, verify_chain
from .scenario import Scenario, ScenarioError, load_scenario

DEFAULT_CHAINCODES = ("battery", "tello-path", "tello-objects",
                      "dashgo-path", "dashgo-objects")

OUTPUT_FILES = ("trajectories.csv", "events.csv", "commits.csv",
                "latency_summary.csv", "inventory.csv", "blocklog.ndhex")


class MissingChaincode(Exception):
    pass


@dataclass
class LatencySummary:
    chaincode: str
    n: int
    min: float
    q1: float
    median: float
    q3: float
    max: float
    outliers: list


@dataclass
class AuditReport:
    checks: list  # (property, ok, detail)

    @property
    def ok(self) -> bool:
        return all(ok for _, ok, _ in self.checks)


# ---------------------------------------------------------------------------
# run


def run(scenario_path, out_dir, seed: int | None = None,
        duration_ms: int | None = None, quiet: bool = False) -> int:
    """Simulate one mission and write the output files. Returns an exit code."""
    try:
        scenario = load_scenario(scenario_path)
        if seed is not None:
            scenario.seed = seed
        if duration_ms is not None:
            scenario.duration = duration_ms
        scenario.validate()
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}")
        return 2
    except (OSError, ValueError) as exc:
        print(f"invalid scenario: {exc}")
        return 2
    world = run_world(scenario)
    problems = verify_world(world)
    os.makedirs(out_dir, exist_ok=True)
    write_outputs(world, out_dir)
    if problems:
        for p in problems:
            print(f"invariant violation: {p}")
        return 1
    if not quiet:
        print(f"wrote {', '.join(OUTPUT_FILES)} to {out_dir}")
    return 0


def run_world(scenario: Scenario):
    from .fleetsim import World

    world = World(scenario)
    world.run()
    return world


def verify_world(world) -> list:
    """Self-checks after a run; any entry is an internal invariant violation."""
    problems = []
    ledger = world.ledger
    channel = ledger.channel(world.channel)
    ok, bad = verify_chain(channel.blocks)
    if not ok:
        problems.append(f"hash chain broken at block {bad}")
    replayed, _ = replay_blocks(channel.blocks)
    if serialize_state(replayed) != serialize_state(channel.state):
        problems.append("replaying the block log does not reproduce the world state")
    if ledger.pending_count() != 0:
        problems.append(f"{ledger.pending_count()} transactions never committed")
    committed = [r.tx_id for r in ledger.commit_records]
    if len(set(committed)) != len(committed):
        problems.append("a transaction committed more than once")
    bound = ledger.config.batch_timeout + ledger.config.validation_budget
    for rec in ledger.commit_records:
        if rec.latency < 0 or rec.latency > bound:
            problems.append(f"{rec.tx_id} latency {rec.latency} ms outside [0, {bound}]")
            break
    return problems


def write_outputs(world, out_dir) -> None:
    scenario = world.scenario
    ledger = world.ledger

    def path(name):
        return os.path.join(out_dir, name)

    with open(path("trajectories.csv"), "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ms", "robot_id", "true_x", "true_y", "true_z",
                    "est_x", "est_y", "est_z"])
        for t, rid, tx, ty, tz, ex, ey, ez in world.trajectory:
            w.writerow([t, rid, f"{tx:.6f}", f"{ty:.6f}", f"{tz:.6f}",
                        f"{ex:.6f}", f"{ey:.6f}", f"{ez:.6f}"])
    with open(path("events.csv"), "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ms", "robot_id", "event", "detail"])
        w.writerows(world.events)
    ledger.export_commits_csv(path("commits.csv"))
    names = mission_chaincodes(scenario)
    records = [(r.chaincode, r.latency) for r in ledger.commit_records if r.status == VALID]
    summaries = summarize_latencies(records, names)
    write_latency_summary(summaries, path("latency_summary.csv"))
    with open(path("inventory.csv"), "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh)
        w.writerow(["object_id", "category", "x", "y", "z", "detector", "t_ms"])
        for key, (raw, _) in ledger.query_prefix(world.channel, "object/"):
            doc = canonical.parse_json(raw)
            w.writerow([doc["object_id"], doc["category"], f"{doc['x']:.6f}",
                        f"{doc['y']:.6f}", f"{doc['z']:.6f}", doc["detector"], doc["t"]])
    ledger.export_blocklog(world.channel, path("blocklog.ndhex"))


def mission_chaincodes(scenario: Scenario) -> tuple:
    uav = scenario.uav().robot_id
    ugv = scenario.ugv().robot_id
    return ("battery", f"{uav}-path", f"{uav}-objects", f"{ugv}-path", f"{ugv}-objects")


# ---------------------------------------------------------------------------
# stats


def summarize_latencies(records, expected_chaincodes) -> list:
    """Box statistics per chaincode from (chaincode, latency_ms) pairs.

    Quartiles use linear interpolation; outliers lie beyond 1.5 IQR of
    the quartiles. Raises MissingChaincode when an expected chaincode has
    no committed transactions.
    """
    by_cc: dict = {}
    for chaincode, latency in records:
        by_cc.setdefault(chaincode, []).append(latency)
    summaries = []
    for name in expected_chaincodes:
        lat = by_cc.get(name)
        if not lat:
            raise MissingChaincode(f"no committed transactions for chaincode {name!r}")
        arr = np.asarray(lat, dtype=np.float64)
        q1, median, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
        iqr = q3 - q1
        lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        outliers = sorted(float(v) for v in arr[(arr < lo) | (arr > hi)])
        summaries.append(LatencySummary(
            chaincode=name, n=len(lat), min=float(arr.min()), q1=float(q1),
            median=float(median), q3=float(q3), max=float(arr.max()),
            outliers=outliers))
    return summaries


def stats(commits_csv, chaincodes=DEFAULT_CHAINCODES) -> list:
    """Summaries for each expected chaincode from a commits.csv export."""
    records = []
    with open(commits_csv, "r", newline="", encoding="ascii") as fh:
        for row in csv.DictReader(fh):
            if row["status"] == VALID:
                records.append((row["chaincode"], float(row["latency_ms"])))
    return summarize_latencies(records, chaincodes)


def write_latency_summary(summaries, path) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh)
        w.writerow(["chaincode", "n", "min_ms", "q1_ms", "median_ms", "q3_ms",
                    "max_ms", "outliers"])
        for s in summaries:
            w.writerow([s.chaincode, s.n, f"{s.min:g}", f"{s.q1:g}", f"{s.median:g}",
                        f"{s.q3:g}", f"{s.max:g}",
                        ";".join(f"{v:g}" for v in s.outliers)])


# ---------------------------------------------------------------------------
# audit


def audit(blocklog_path, commits_csv=None) -> AuditReport:
    """Verify an exported block log without trusting the process that wrote it."""
    checks = []
    try:
        blocks = load_blocklog(blocklog_path)
    except DecodeError as exc:
        checks.append(("hash-chain", False, f"block log undecodable: {exc}"))
        checks.append(("replay-equivalence", False, "skipped: undecodable log"))
        checks.append(("no-lost-tx", False, "skipped: undecodable log"))
        return AuditReport(checks)
    ok, bad = verify_chain(blocks)
    checks.append(("hash-chain", ok,
                   "all block digests verify" if ok else f"failure at block {bad}"))
    checks.append(_check_replay(blocks))
    checks.append(_check_accounting(blocks, commits_csv))
    return AuditReport(checks)


def _check_replay(blocks):
    """Fold recorded write-sets and independently re-execute every contract call.

    The two state folds must agree byte for byte; any divergence between
    a transaction's recorded effects and what its chaincode actually does
    with the recorded arguments is reported.
    """
    recorded_state, statuses = replay_blocks(blocks)
    contracts: dict = {}
    state: dict = {}
    sorted_keys: list = []
    for block in blocks:
        for tx in block.tx_list:
            if statuses[tx.tx_id] == INVALIDATED:
                continue
            contract = contracts.setdefault(tx.chaincode, contract_for_chaincode(tx.chaincode))
            ctx = TxContext(StateView(state, sorted_keys=sorted_keys))
            try:
                contract.dispatch(ctx, tx.function, tx.args)
            except ContractError as exc:
                return ("replay-equivalence", False,
                        f"{tx.tx_id}: {tx.chaincode}.{tx.function} failed on replay: {exc}")
            if ctx.write_set != tx.write_set:
                return ("replay-equivalence", False,
                        f"{tx.tx_id}: re-executed write set differs from the recorded one")
            if ctx.read_set != tx.read_set:
                return ("replay-equivalence", False,
                        f"{tx.tx_id}: re-executed read set differs from the recorded one")
            for key, value in tx.write_set:
                entry = state.get(key)
                if entry is None:
                    bisect.insort(sorted_keys, key)
                state[key] = (value, (entry[1] if entry else 0) + 1)
    if serialize_state(state) != serialize_state(recorded_state):
        return ("replay-equivalence", False,
                "re-executed state differs from the recorded fold")
    return ("replay-equivalence", True,
            f"{sum(len(b.tx_list) for b in blocks)} transactions re-executed")


def _check_accounting(blocks, commits_csv):
    seen: dict = {}
    for block in blocks:
        for tx in block.tx_list:
            if tx.tx_id in seen:
                return ("no-lost-tx", False,
                        f"{tx.tx_id} appears in blocks {seen[tx.tx_id]} and {block.number}")
            seen[tx.tx_id] = block.number
    if commits_csv is not None:
        with open(commits_csv, "r", newline="", encoding="ascii") as fh:
            committed = {row["tx_id"] for row in csv.DictReader(fh)}
        missing = sorted(committed - set(seen))
        if missing:
            return ("no-lost-tx", False, f"committed tx missing from log: {missing[0]}")
        extra = sorted(set(seen) - committed)
        if extra:
            return ("no-lost-tx", False, f"logged tx has no commit record: {extra[0]}")
        return ("no-lost-tx", True,
                f"{len(seen)} transactions, one block each, matching commit records")
    return ("no-lost-tx", True, f"{len(seen)} transactions, one block each")
