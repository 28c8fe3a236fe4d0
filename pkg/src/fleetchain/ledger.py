"""Miniature permissioned ledger: identities, ordering, validation, state.

One `Ledger` hosts an identity registry and a set of channels. Each
channel keeps a FIFO transaction queue, a block chain, and a versioned
key-value world state. Contract execution happens at submission time
against the committed state overlaid with the write-sets of transactions
still in flight, so a FIFO pipeline never invalidates itself; the commit
path re-checks every read against the then-current state (MVCC) and
rejects conflicting transactions.

Everything is driven by an explicit millisecond clock passed in by the
caller, which makes whole runs bit-reproducible.
"""

from __future__ import annotations

import bisect
import csv
import threading
from dataclasses import dataclass

from . import canonical
from .canonical import ZERO_HASH, block_hash
from .chaincode import ContractError, TxContext


class LedgerError(Exception):
    pass


class DuplicateIdentity(LedgerError):
    pass


class UnknownIdentity(LedgerError):
    pass


class UnknownOrg(LedgerError):
    pass


class DuplicateChannel(LedgerError):
    pass


class UnknownChannel(LedgerError):
    pass


class NotChannelMember(LedgerError):
    pass


class UnknownChaincode(LedgerError):
    pass


class BrokenChain(LedgerError):
    pass


ROLES = ("robot", "operator", "peer", "orderer")
ENDORSEMENT_POLICIES = ("any_org", "all_orgs")

VALID = "valid"
INVALIDATED = "invalidated"


@dataclass(frozen=True)
class Identity:
    org_id: str
    member_id: str
    role: str


@dataclass
class Transaction:
    tx_id: str
    creator: Identity
    channel: str
    chaincode: str
    function: str
    args: list
    submit_time: int
    read_set: list  # [(key, version)]
    write_set: list  # [(key, value_bytes)]


@dataclass
class Block:
    number: int
    prev_hash: bytes
    tx_list: list
    cut_time: int
    hash: bytes


@dataclass(frozen=True)
class LedgerConfig:
    batch_size: int = 10
    batch_timeout: int = 1000  # ms
    channels: tuple = ("inventory",)
    endorsement: str = "any_org"
    validation_budget: int = 1  # ms added between block cut and commit

    def validate(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.batch_timeout <= 0:
            raise ValueError("batch_timeout must be > 0")
        if self.endorsement not in ENDORSEMENT_POLICIES:
            raise ValueError(f"unknown endorsement policy {self.endorsement!r}")
        if self.validation_budget < 0:
            raise ValueError("validation_budget must be >= 0")


@dataclass
class CommitRecord:
    tx_id: str
    chaincode: str
    submit_time: int
    commit_time: int
    latency: int
    status: str


class StateView:
    """Read view over committed state plus an optional overlay.

    When the caller owns a sorted key list for the committed map,
    `last_under` resolves in O(log n); otherwise it degrades to a linear
    scan, which is fine for small states.
    """

    def __init__(self, committed: dict, overlay: dict | None = None,
                 sorted_keys: list | None = None):
        self._committed = committed
        self._overlay = overlay
        self._sorted_keys = sorted_keys

    def get(self, key: str):
        if self._overlay is not None and key in self._overlay:
            return self._overlay[key]
        return self._committed.get(key)

    def scan(self, prefix: str):
        keys = set(self._committed)
        if self._overlay is not None:
            keys |= set(self._overlay)
        for key in sorted(keys):
            if key.startswith(prefix):
                yield key, self.get(key)

    def last_under(self, prefix: str):
        """Greatest key starting with prefix, or None. A range read: not
        version-tracked, so it must only guide access to stable keys."""
        best = None
        if self._sorted_keys is not None:
            i = bisect.bisect_right(self._sorted_keys, prefix + "\U0010ffff")
            if i and self._sorted_keys[i - 1].startswith(prefix):
                best = self._sorted_keys[i - 1]
        else:
            for key in self._committed:
                if key.startswith(prefix) and (best is None or key > best):
                    best = key
        if self._overlay is not None:
            for key in self._overlay:
                if key.startswith(prefix) and (best is None or key > best):
                    best = key
        return best


class Channel:
    def __init__(self, name: str, member_orgs: list, config: LedgerConfig):
        self.name = name
        self.member_orgs = list(member_orgs)
        self.config = config
        self.chaincodes: dict = {}
        self.state: dict = {}  # key -> (value_bytes, version)
        self._sorted_keys: list = []  # committed keys, kept ordered for range reads
        self.blocks: list[Block] = []
        self.queue: list[Transaction] = []  # FIFO, submit_time non-decreasing
        self.cut_uncommitted: list[Block] = []
        self.overlay: dict = {}  # speculative state ahead of commit
        self.max_queue_len = 0
        genesis = Block(number=0, prev_hash=ZERO_HASH, tx_list=[], cut_time=0,
                        hash=block_hash(0, ZERO_HASH, []))
        self.blocks.append(genesis)
        self._next_number = 1
        self._last_cut_hash = genesis.hash

    # -- views -------------------------------------------------------

    def exec_view(self) -> StateView:
        return StateView(self.state, self.overlay, self._sorted_keys)

    def committed_view(self) -> StateView:
        return StateView(self.state, sorted_keys=self._sorted_keys)

    # -- speculative overlay ------------------------------------------

    def _apply_overlay(self, tx: Transaction):
        for key, value in tx.write_set:
            prev = self.overlay.get(key) or self.state.get(key)
            version = (prev[1] if prev else 0) + 1
            self.overlay[key] = (value, version)

    def _rebuild_overlay(self):
        self.overlay = {}
        for block in self.cut_uncommitted:
            for tx in block.tx_list:
                self._apply_overlay(tx)
        for tx in self.queue:
            self._apply_overlay(tx)

    # -- ordering ------------------------------------------------------

    def cut_due_blocks(self, now: int) -> list[Block]:
        """Materialize every block whose cut condition was met by `now`.

        A block is cut when the queue reaches batch_size (cut time is the
        arrival of the filling transaction) or when the oldest queued
        transaction has waited batch_timeout (cut time is that deadline);
        the size trigger wins ties. Cut times therefore do not depend on
        how often this is polled.
        """
        cfg = self.config
        cut: list[Block] = []
        while self.queue:
            deadline = self.queue[0].submit_time + cfg.batch_timeout
            if len(self.queue) >= cfg.batch_size:
                t_size = self.queue[cfg.batch_size - 1].submit_time
                if t_size <= deadline:
                    if t_size > now:
                        break
                    txs = self.queue[: cfg.batch_size]
                    cut_time = t_size
                else:
                    if deadline > now:
                        break
                    txs = self._due_prefix(deadline)
                    cut_time = deadline
            else:
                if deadline > now:
                    break
                txs = self._due_prefix(deadline)
                cut_time = deadline
            del self.queue[: len(txs)]
            block = Block(
                number=self._next_number,
                prev_hash=self._last_cut_hash,
                tx_list=txs,
                cut_time=cut_time,
                hash=block_hash(self._next_number, self._last_cut_hash, [t.tx_id for t in txs]),
            )
            self._next_number += 1
            self._last_cut_hash = block.hash
            self.cut_uncommitted.append(block)
            cut.append(block)
        return cut

    def _due_prefix(self, deadline: int) -> list[Transaction]:
        txs = []
        for tx in self.queue:
            if tx.submit_time > deadline or len(txs) >= self.config.batch_size:
                break
            txs.append(tx)
        return txs

    # -- commit --------------------------------------------------------

    def commit_block(self, block: Block, now: int) -> list[CommitRecord]:
        last = self.blocks[-1]
        if block.number != last.number + 1:
            raise BrokenChain(
                f"block {block.number} does not follow committed height {last.number}")
        if block.prev_hash != last.hash:
            raise BrokenChain(f"block {block.number} prev_hash mismatch")
        records = []
        written_in_block: set = set()
        for tx in block.tx_list:
            ok = all(self._current_version(key) == version for key, version in tx.read_set)
            if ok and any(key in written_in_block for key, _ in tx.write_set):
                ok = False
            if ok:
                for key, value in tx.write_set:
                    entry = self.state.get(key)
                    if entry is None:
                        bisect.insort(self._sorted_keys, key)
                    self.state[key] = (value, (entry[1] if entry else 0) + 1)
                    written_in_block.add(key)
                status = VALID
            else:
                status = INVALIDATED
            records.append(CommitRecord(
                tx_id=tx.tx_id,
                chaincode=tx.chaincode,
                submit_time=tx.submit_time,
                commit_time=now,
                latency=now - tx.submit_time,
                status=status,
            ))
        self.blocks.append(block)
        if self.cut_uncommitted and self.cut_uncommitted[0] is block:
            self.cut_uncommitted.pop(0)
        self._rebuild_overlay()
        return records

    def _current_version(self, key: str) -> int:
        entry = self.state.get(key)
        return entry[1] if entry else 0


class Ledger:
    """Facade tying the registry, channels and the simulation clock together."""

    def __init__(self, config: LedgerConfig | None = None):
        self.config = config or LedgerConfig()
        self.config.validate()
        self.registry: dict = {}  # (org_id, member_id) -> Identity
        self.channels: dict = {}
        self.commit_records: list[CommitRecord] = []
        self._tx_counter = 0
        self._submit_lock = threading.Lock()
        self._subscribers: list = []

    # -- membership ----------------------------------------------------

    def register_identity(self, org_id: str, member_id: str, role: str) -> Identity:
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        key = (org_id, member_id)
        if key in self.registry:
            raise DuplicateIdentity(f"{org_id}/{member_id} already registered")
        ident = Identity(org_id=org_id, member_id=member_id, role=role)
        self.registry[key] = ident
        return ident

    def get_identity(self, org_id: str, member_id: str) -> Identity:
        try:
            return self.registry[(org_id, member_id)]
        except KeyError:
            raise UnknownIdentity(f"{org_id}/{member_id} is not registered") from None

    def known_orgs(self) -> set:
        return {ident.org_id for ident in self.registry.values()}

    # -- channels and chaincode -----------------------------------------

    def create_channel(self, name: str, member_orgs: list) -> Channel:
        if name in self.channels:
            raise DuplicateChannel(f"channel {name!r} already exists")
        if not member_orgs:
            raise UnknownOrg("channel needs at least one member org")
        known = self.known_orgs()
        for org in member_orgs:
            if org not in known:
                raise UnknownOrg(f"org {org!r} has no registered identities")
        channel = Channel(name, member_orgs, self.config)
        self.channels[name] = channel
        return channel

    def channel(self, name: str) -> Channel:
        try:
            return self.channels[name]
        except KeyError:
            raise UnknownChannel(f"channel {name!r} does not exist") from None

    def install_chaincode(self, channel: str, name: str, contract) -> None:
        self.channel(channel).chaincodes[name] = contract

    # -- transaction pipeline --------------------------------------------

    def submit(self, identity: Identity, channel: str, chaincode: str,
               function: str, args: list, now: int) -> str:
        """Execute a contract against the channel snapshot and enqueue the result.

        Returns the transaction id immediately; commitment is asynchronous
        and observable through commit records. Contract failures propagate
        and nothing is enqueued.
        """
        if self.registry.get((identity.org_id, identity.member_id)) != identity:
            raise UnknownIdentity(f"{identity.org_id}/{identity.member_id} is not registered")
        ch = self.channel(channel)
        if identity.org_id not in ch.member_orgs:
            raise NotChannelMember(f"{identity.org_id} is not a member of {channel!r}")
        contract = ch.chaincodes.get(chaincode)
        if contract is None:
            raise UnknownChaincode(f"chaincode {chaincode!r} not installed on {channel!r}")
        with self._submit_lock:
            ctx = TxContext(ch.exec_view())
            contract.dispatch(ctx, function, args)
            self._tx_counter += 1
            tx = Transaction(
                tx_id=f"tx-{self._tx_counter:08d}",
                creator=identity,
                channel=channel,
                chaincode=chaincode,
                function=function,
                args=list(args),
                submit_time=now,
                read_set=ctx.read_set,
                write_set=ctx.write_set,
            )
            ch.queue.append(tx)
            ch.max_queue_len = max(ch.max_queue_len, len(ch.queue))
            ch._apply_overlay(tx)
        return tx.tx_id

    def enqueue_raw(self, tx: Transaction) -> None:
        """Enqueue a pre-built transaction, bypassing execution.

        Test hook for constructing read/write-set conflicts that the
        sequential submit path cannot produce.
        """
        ch = self.channel(tx.channel)
        with self._submit_lock:
            ch.queue.append(tx)
            ch.max_queue_len = max(ch.max_queue_len, len(ch.queue))
            ch._apply_overlay(tx)

    def evaluate(self, identity: Identity, channel: str, chaincode: str,
                 function: str, args: list):
        """Run a contract function read-only against committed state."""
        if self.registry.get((identity.org_id, identity.member_id)) != identity:
            raise UnknownIdentity(f"{identity.org_id}/{identity.member_id} is not registered")
        ch = self.channel(channel)
        contract = ch.chaincodes.get(chaincode)
        if contract is None:
            raise UnknownChaincode(f"chaincode {chaincode!r} not installed on {channel!r}")
        ctx = TxContext(ch.committed_view())
        result = contract.dispatch(ctx, function, args)
        if ctx.write_set:
            raise ContractError(f"{function} writes state and cannot be evaluated")
        return result

    def tick_orderer(self, now: int) -> list[Block]:
        blocks = []
        for ch in self.channels.values():
            blocks.extend(ch.cut_due_blocks(now))
        return blocks

    def commit_block(self, channel: str, block: Block, now: int) -> list[CommitRecord]:
        records = self.channel(channel).commit_block(block, now)
        self.commit_records.extend(records)
        for fn in self._subscribers:
            for rec in records:
                fn(rec)
        return records

    def advance(self, now: int) -> list[CommitRecord]:
        """Cut due blocks and commit every block whose commit time has arrived.

        Blocks commit validation_budget ms after their cut time; a block
        cut at `now` therefore becomes visible on the next call, keeping
        reads strictly behind commits.
        """
        self.tick_orderer(now)
        records = []
        for name, ch in self.channels.items():
            while ch.cut_uncommitted:
                block = ch.cut_uncommitted[0]
                commit_time = block.cut_time + self.config.validation_budget
                if commit_time > now:
                    break
                records.extend(self.commit_block(name, block, commit_time))
        return records

    def drain(self, now: int, dt: int = 1) -> int:
        """Advance in dt steps until no transaction is queued or cut. Returns the end time."""
        t = now
        while any(ch.queue or ch.cut_uncommitted for ch in self.channels.values()):
            t += dt
            self.advance(t)
        return t

    def pending_count(self) -> int:
        return sum(len(ch.queue) + sum(len(b.tx_list) for b in ch.cut_uncommitted)
                   for ch in self.channels.values())

    def subscribe(self, fn) -> None:
        """Register a callback invoked once per commit record."""
        self._subscribers.append(fn)

    # -- reads ----------------------------------------------------------

    def query_state(self, channel: str, key: str):
        """Committed (value, version) for key, or None if absent."""
        return self.channel(channel).state.get(key)

    def query_prefix(self, channel: str, prefix: str):
        ch = self.channel(channel)
        return [(k, v) for k, v in sorted(ch.state.items()) if k.startswith(prefix)]

    # -- audit support ----------------------------------------------------

    def verify_chain(self, channel: str):
        """Full-scan hash-chain audit; returns (ok, first_bad_block or None)."""
        blocks = self.channel(channel).blocks
        return verify_chain(blocks)

    def export_blocklog(self, channel: str, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            for block in self.channel(channel).blocks:
                fh.write(canonical.encode_block(block).hex())
                fh.write("\n")

    def export_commits_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="ascii") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tx_id", "chaincode", "submit_ms", "commit_ms",
                             "latency_ms", "status"])
            for rec in self.commit_records:
                writer.writerow([rec.tx_id, rec.chaincode, rec.submit_time,
                                 rec.commit_time, rec.latency, rec.status])


def verify_chain(blocks: list[Block]):
    """Check numbering, parent hashes and stored digests over a block list."""
    prev_hash = ZERO_HASH
    for i, block in enumerate(blocks):
        if block.number != i:
            return False, i
        if block.prev_hash != prev_hash:
            return False, i
        expected = block_hash(block.number, block.prev_hash, [t.tx_id for t in block.tx_list])
        if block.hash != expected:
            return False, i
        if i > 0 and not block.tx_list:
            return False, i
        prev_hash = block.hash
    return True, None


def replay_blocks(blocks: list[Block]):
    """Fold a block log over empty state, re-running MVCC validation.

    Returns (state, statuses) where statuses maps tx_id to valid/invalidated.
    """
    state: dict = {}
    statuses: dict = {}
    for block in blocks:
        written: set = set()
        for tx in block.tx_list:
            ok = all((state.get(k, (b"", 0))[1]) == v for k, v in tx.read_set)
            if ok and any(k in written for k, _ in tx.write_set):
                ok = False
            if ok:
                for key, value in tx.write_set:
                    _, version = state.get(key, (b"", 0))
                    state[key] = (value, version + 1)
                    written.add(key)
                statuses[tx.tx_id] = VALID
            else:
                statuses[tx.tx_id] = INVALIDATED
    return state, statuses


def load_blocklog(path) -> list[Block]:
    blocks = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                raw = bytes.fromhex(line)
            except ValueError as exc:
                raise canonical.DecodeError(f"line {lineno}: not valid hex") from exc
            blocks.append(canonical.decode_block(raw))
    return blocks
