import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fleetchain.canonical import serialize_state
from fleetchain.chaincode import Contract, ContractError, PathRecorder
from fleetchain.ledger import (
    BrokenChain,
    DuplicateChannel,
    DuplicateIdentity,
    Identity,
    Ledger,
    LedgerConfig,
    NotChannelMember,
    Transaction,
    UnknownChaincode,
    UnknownIdentity,
    UnknownOrg,
    load_blocklog,
    replay_blocks,
    verify_chain,
)


def make_ledger(batch_size=10, batch_timeout=1000):
    ledger = Ledger(LedgerConfig(batch_size=batch_size, batch_timeout=batch_timeout))
    dashgo = ledger.register_identity("Org1", "dashgo", "robot")
    tello = ledger.register_identity("Org2", "tello", "robot")
    ledger.create_channel("inventory", ["Org1", "Org2"])
    ledger.install_chaincode("inventory", "assets", Contract())
    ledger.install_chaincode("inventory", "dashgo-path", PathRecorder())
    return ledger, dashgo, tello


def raw_tx(ledger, tx_id, reads, writes, now=0, chaincode="assets"):
    tx = Transaction(
        tx_id=tx_id,
        creator=ledger.get_identity("Org1", "dashgo"),
        channel="inventory",
        chaincode=chaincode,
        function="CreateAsset",
        args=[],
        submit_time=now,
        read_set=list(reads),
        write_set=list(writes),
    )
    ledger.enqueue_raw(tx)
    return tx


# -- registry ----------------------------------------------------------------


def test_register_two_orgs():
    ledger, dashgo, tello = make_ledger()
    assert dashgo == Identity("Org1", "dashgo", "robot")
    assert ledger.known_orgs() == {"Org1", "Org2"}


def test_duplicate_identity():
    ledger, _, _ = make_ledger()
    with pytest.raises(DuplicateIdentity):
        ledger.register_identity("Org1", "dashgo", "operator")


def test_unknown_role():
    ledger, _, _ = make_ledger()
    with pytest.raises(ValueError):
        ledger.register_identity("Org1", "x", "wizard")


def test_registered_identity_can_submit_end_to_end():
    ledger, _, tello = make_ledger()
    tx_id = ledger.submit(tello, "inventory", "assets", "CreateAsset",
                          ["k", "1"], now=0)
    records = ledger.advance(1000 + ledger.config.validation_budget)
    assert [r.tx_id for r in records] == [tx_id]
    assert records[0].status == "valid"
    assert ledger.query_state("inventory", "k") == (b"1", 1)


# -- channels ----------------------------------------------------------------


def test_fresh_channel_has_genesis():
    ledger, _, _ = make_ledger()
    channel = ledger.channel("inventory")
    assert len(channel.blocks) == 1
    assert channel.blocks[0].number == 0
    assert channel.blocks[0].tx_list == []
    assert verify_chain(channel.blocks) == (True, None)


def test_duplicate_channel():
    ledger, _, _ = make_ledger()
    with pytest.raises(DuplicateChannel):
        ledger.create_channel("inventory", ["Org1"])


def test_unknown_org():
    ledger, _, _ = make_ledger()
    with pytest.raises(UnknownOrg):
        ledger.create_channel("other", ["Org9"])


def test_query_fresh_channel_is_empty():
    ledger, _, _ = make_ledger()
    assert ledger.query_state("inventory", "anything") is None


# -- submission preconditions --------------------------------------------------


def test_unregistered_identity_rejected():
    ledger, _, _ = make_ledger()
    ghost = Identity("Org1", "ghost", "robot")
    with pytest.raises(UnknownIdentity):
        ledger.submit(ghost, "inventory", "assets", "CreateAsset", ["k", "1"], now=0)


def test_non_member_rejected():
    ledger, _, _ = make_ledger()
    outsider = ledger.register_identity("Org3", "intruder", "robot")
    with pytest.raises(NotChannelMember):
        ledger.submit(outsider, "inventory", "assets", "CreateAsset", ["k", "1"], now=0)


def test_unknown_chaincode():
    ledger, dashgo, _ = make_ledger()
    with pytest.raises(UnknownChaincode):
        ledger.submit(dashgo, "inventory", "nonexistent", "F", [], now=0)


def test_contract_error_never_enqueues():
    ledger, dashgo, _ = make_ledger()
    with pytest.raises(ContractError):
        ledger.submit(dashgo, "inventory", "assets", "ReadAsset", ["missing"], now=0)
    assert ledger.channel("inventory").queue == []


# -- ordering ------------------------------------------------------------------


def submit_n(ledger, identity, n, now):
    return [ledger.submit(identity, "inventory", "assets", "CreateAsset",
                          [f"k{now}-{i}", "1"], now=now) for i in range(n)]


def test_full_batch_cuts_immediately():
    ledger, dashgo, _ = make_ledger(batch_size=10)
    submit_n(ledger, dashgo, 10, now=400)
    blocks = ledger.tick_orderer(400)
    assert len(blocks) == 1
    assert len(blocks[0].tx_list) == 10
    assert blocks[0].cut_time == 400


def test_empty_queue_timeout_cuts_nothing():
    ledger, _, _ = make_ledger()
    assert ledger.tick_orderer(10_000) == []


def test_timeout_cuts_partial_batch():
    ledger, dashgo, _ = make_ledger(batch_size=10, batch_timeout=1000)
    submit_n(ledger, dashgo, 3, now=200)
    assert ledger.tick_orderer(1199) == []  # oldest age 999 < timeout
    blocks = ledger.tick_orderer(1200)  # age exactly the timeout
    assert len(blocks) == 1
    assert len(blocks[0].tx_list) == 3
    assert blocks[0].cut_time == 1200


def test_timeout_cut_time_is_deadline_not_poll_time():
    ledger, dashgo, _ = make_ledger(batch_timeout=1000)
    submit_n(ledger, dashgo, 2, now=100)
    blocks = ledger.tick_orderer(5000)  # polled late
    assert blocks[0].cut_time == 1100


def test_timeout_block_excludes_later_submissions():
    ledger, dashgo, _ = make_ledger(batch_size=10, batch_timeout=1000)
    submit_n(ledger, dashgo, 3, now=0)
    submit_n(ledger, dashgo, 2, now=1500)
    blocks = ledger.tick_orderer(1500)
    assert [len(b.tx_list) for b in blocks] == [3]
    assert blocks[0].cut_time == 1000
    assert len(ledger.channel("inventory").queue) == 2


def test_size_beats_timeout_on_tie():
    ledger, dashgo, _ = make_ledger(batch_size=4, batch_timeout=1000)
    submit_n(ledger, dashgo, 3, now=0)
    submit_n(ledger, dashgo, 1, now=1000)  # queue fills exactly at the deadline
    blocks = ledger.tick_orderer(1000)
    assert len(blocks) == 1
    assert len(blocks[0].tx_list) == 4  # size trigger took the full batch
    assert blocks[0].cut_time == 1000


def test_burst_cuts_repeatedly():
    ledger, dashgo, _ = make_ledger(batch_size=5)
    submit_n(ledger, dashgo, 12, now=50)
    blocks = ledger.tick_orderer(50)
    assert [len(b.tx_list) for b in blocks] == [5, 5]
    assert [b.number for b in blocks] == [1, 2]


def test_lone_tx_latency_spans_timeout_plus_budget():
    ledger, dashgo, _ = make_ledger()
    ledger.submit(dashgo, "inventory", "assets", "CreateAsset", ["k", "1"], now=0)
    records = []
    t = 0
    while not records:
        t += 20
        records = ledger.advance(t)
    assert records[0].latency == 1000 + ledger.config.validation_budget


# -- commit and validation -------------------------------------------------------


def test_write_write_conflict_first_wins():
    ledger, _, _ = make_ledger(batch_size=2)
    raw_tx(ledger, "t1", reads=[("k", 0)], writes=[("k", b"a")])
    raw_tx(ledger, "t2", reads=[], writes=[("k", b"b")])
    records = ledger.advance(ledger.config.validation_budget)
    assert [r.status for r in records] == ["valid", "invalidated"]
    assert ledger.query_state("inventory", "k") == (b"a", 1)


def test_stale_read_invalidated():
    ledger, dashgo, _ = make_ledger(batch_size=1)
    ledger.submit(dashgo, "inventory", "assets", "CreateAsset", ["k", "1"], now=0)
    ledger.advance(1)  # k committed at version 1
    raw_tx(ledger, "stale", reads=[("k", 0)], writes=[("k", b"9")], now=2)
    records = ledger.advance(3)
    assert records[0].status == "invalidated"
    assert ledger.query_state("inventory", "k") == (b"1", 1)  # untouched


def test_replay_reproduces_state():
    ledger, dashgo, tello = make_ledger(batch_size=3)
    for i in range(7):
        ledger.submit(dashgo, "inventory", "assets", "CreateAsset",
                      [f"k{i}", str(i)], now=i * 10)
        ledger.submit(tello, "inventory", "dashgo-path", "RecordPath",
                      ["tello", str(i * 10), "1", "2", "3"], now=i * 10)
    ledger.drain(100, dt=20)
    channel = ledger.channel("inventory")
    state, statuses = replay_blocks(channel.blocks)
    assert serialize_state(state) == serialize_state(channel.state)
    assert all(s == "valid" for s in statuses.values())


def test_version_counts_valid_writes():
    ledger, dashgo, _ = make_ledger(batch_size=1)
    ledger.submit(dashgo, "inventory", "assets", "CreateAsset", ["k", "0"], now=0)
    for i in range(5):
        ledger.submit(dashgo, "inventory", "assets", "UpdateAsset",
                      ["k", str(i)], now=i)
    raw_tx(ledger, "bad", reads=[("k", 1)], writes=[("k", b"99")], now=9)
    ledger.drain(10)
    assert ledger.query_state("inventory", "k")[1] == 6  # 6 valid writes, 1 rejected


def test_broken_chain_rejected():
    ledger, dashgo, _ = make_ledger(batch_size=1)
    ledger.submit(dashgo, "inventory", "assets", "CreateAsset", ["k", "1"], now=0)
    blocks = ledger.tick_orderer(0)
    bad = blocks[0]
    bad.number = 5
    with pytest.raises(BrokenChain):
        ledger.commit_block("inventory", bad, 1)


def test_commit_notifications_delivered():
    ledger, dashgo, _ = make_ledger(batch_size=1)
    seen = []
    ledger.subscribe(seen.append)
    tx_id = ledger.submit(dashgo, "inventory", "assets", "CreateAsset", ["k", "1"], now=0)
    ledger.advance(1)
    assert [r.tx_id for r in seen] == [tx_id]


def test_evaluate_reads_committed_only():
    ledger, dashgo, _ = make_ledger(batch_size=10)
    ledger.submit(dashgo, "inventory", "assets", "CreateAsset", ["k", "1"], now=0)
    # still pending: evaluation must not see it
    with pytest.raises(ContractError):
        ledger.evaluate(dashgo, "inventory", "assets", "ReadAsset", ["k"])
    ledger.drain(0)
    assert ledger.evaluate(dashgo, "inventory", "assets", "ReadAsset", ["k"]) == 1


def test_evaluate_rejects_writes():
    ledger, dashgo, _ = make_ledger()
    with pytest.raises(ContractError):
        ledger.evaluate(dashgo, "inventory", "assets", "CreateAsset", ["k", "1"])


# -- exports -----------------------------------------------------------------------


def test_blocklog_round_trip(tmp_path):
    ledger, dashgo, _ = make_ledger(batch_size=2)
    submit_n(ledger, dashgo, 6, now=5)
    ledger.drain(5)
    path = tmp_path / "blocklog.ndhex"
    ledger.export_blocklog("inventory", path)
    blocks = load_blocklog(path)
    originals = ledger.channel("inventory").blocks
    assert len(blocks) == len(originals)
    assert all(a == b for a, b in zip(blocks, originals))
    assert verify_chain(blocks) == (True, None)


def test_commits_csv_header(tmp_path):
    ledger, dashgo, _ = make_ledger(batch_size=1)
    ledger.submit(dashgo, "inventory", "assets", "CreateAsset", ["k", "1"], now=0)
    ledger.advance(1)
    path = tmp_path / "commits.csv"
    ledger.export_commits_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "tx_id,chaincode,submit_ms,commit_ms,latency_ms,status"
    assert lines[1].endswith(",valid")


# -- concurrency boundary -------------------------------------------------------------


def test_concurrent_submissions_never_lost():
    ledger, dashgo, tello = make_ledger(batch_size=7)
    errors = []

    def agent(identity, tag):
        try:
            for i in range(50):
                ledger.submit(identity, "inventory", "assets", "CreateAsset",
                              [f"{tag}/{i}", "1"], now=0)
        except Exception as exc:  # pragma: no cover - failure reporting
            errors.append(exc)

    threads = [threading.Thread(target=agent, args=(ident, f"a{k}"))
               for k, ident in enumerate([dashgo, tello, dashgo, tello])]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []
    ledger.drain(0)
    committed = [r for r in ledger.commit_records if r.status == "valid"]
    assert len(committed) == 200
    assert len({r.tx_id for r in committed}) == 200


# -- properties ------------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(
    batch_size=st.integers(1, 6),
    batch_timeout=st.integers(1, 50),
    gaps=st.lists(st.integers(0, 30), min_size=1, max_size=40),
)
def test_cutting_invariants_hold_for_any_schedule(batch_size, batch_timeout, gaps):
    ledger = Ledger(LedgerConfig(batch_size=batch_size, batch_timeout=batch_timeout))
    dashgo = ledger.register_identity("Org1", "dashgo", "robot")
    ledger.create_channel("inventory", ["Org1"])
    ledger.install_chaincode("inventory", "assets", Contract())
    now = 0
    submitted = []
    for i, gap in enumerate(gaps):
        now += gap
        submitted.append(ledger.submit(dashgo, "inventory", "assets", "CreateAsset",
                                       [f"k{i}", "1"], now=now))
        ledger.advance(now)
    end = ledger.drain(now)
    channel = ledger.channel("inventory")
    blocks = channel.blocks
    assert verify_chain(blocks) == (True, None)
    sizes = [len(b.tx_list) for b in blocks[1:]]
    assert all(1 <= s <= batch_size for s in sizes)
    cut_times = [b.cut_time for b in blocks[1:]]
    assert cut_times == sorted(cut_times)
    seen = [tx.tx_id for b in blocks for tx in b.tx_list]
    assert sorted(seen) == sorted(submitted)  # exactly once, none lost
    bound = batch_timeout + ledger.config.validation_budget
    assert all(0 <= r.latency <= bound for r in ledger.commit_records)
    assert end >= now
