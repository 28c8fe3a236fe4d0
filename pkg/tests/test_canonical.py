import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fleetchain import canonical
from fleetchain.canonical import ZERO_HASH, block_hash
from fleetchain.ledger import Block, Identity, Transaction


def make_tx(tx_id="tx-1", args=("a", "b"), writes=((("k1"), b"v1"),)):
    return Transaction(
        tx_id=tx_id,
        creator=Identity("Org1", "dashgo", "robot"),
        channel="inventory",
        chaincode="dashgo-path",
        function="RecordPath",
        args=list(args),
        submit_time=1234,
        read_set=[("k0", 3)],
        write_set=[(k, v) for k, v in writes],
    )


def make_block(number=1, prev=ZERO_HASH, txs=None, cut_time=500):
    txs = [make_tx()] if txs is None else txs
    return Block(number=number, prev_hash=prev, tx_list=txs, cut_time=cut_time,
                 hash=block_hash(number, prev, [t.tx_id for t in txs]))


def test_transaction_round_trip():
    tx = make_tx()
    raw = canonical.encode_transaction(tx)
    reader = canonical.Reader(raw)
    back = canonical.decode_transaction(reader)
    reader.done()
    assert back == tx
    assert canonical.encode_transaction(back) == raw


def test_block_round_trip():
    block = make_block()
    raw = canonical.encode_block(block)
    back = canonical.decode_block(raw)
    assert back == block
    assert canonical.encode_block(back) == raw


def test_block_hash_covers_order():
    h1 = block_hash(1, ZERO_HASH, ["a", "b"])
    h2 = block_hash(1, ZERO_HASH, ["b", "a"])
    h3 = block_hash(2, ZERO_HASH, ["a", "b"])
    assert len(h1) == 32
    assert h1 != h2
    assert h1 != h3
    assert h1 == block_hash(1, ZERO_HASH, ["a", "b"])


def test_trailing_bytes_rejected():
    raw = canonical.encode_block(make_block()) + b"x"
    with pytest.raises(canonical.DecodeError):
        canonical.decode_block(raw)


def test_truncation_rejected():
    raw = canonical.encode_block(make_block())
    with pytest.raises(canonical.DecodeError):
        canonical.decode_block(raw[:-5])


def test_canonical_json_sorts_keys():
    assert canonical.canonical_json({"b": 1, "a": [2, {"z": 0, "y": 1}]}) == \
        b'{"a":[2,{"y":1,"z":0}],"b":1}'


def test_serialize_state_is_key_ordered():
    s1 = {"b": (b"2", 1), "a": (b"1", 2)}
    s2 = {"a": (b"1", 2), "b": (b"2", 1)}
    assert canonical.serialize_state(s1) == canonical.serialize_state(s2)


text = st.text(alphabet=st.characters(codec="utf-8"), max_size=20)


@settings(max_examples=60, deadline=None)
@given(
    tx_id=text,
    args=st.lists(text, max_size=4),
    reads=st.lists(st.tuples(text, st.integers(0, 2**64 - 1)), max_size=4),
    writes=st.lists(st.tuples(text, st.binary(max_size=30)), max_size=4),
    submit=st.integers(0, 2**64 - 1),
)
def test_any_transaction_round_trips(tx_id, args, reads, writes, submit):
    tx = make_tx(tx_id=tx_id)
    tx.args = args
    tx.read_set = reads
    tx.write_set = writes
    tx.submit_time = submit
    raw = canonical.encode_transaction(tx)
    reader = canonical.Reader(raw)
    back = canonical.decode_transaction(reader)
    reader.done()
    assert back == tx
