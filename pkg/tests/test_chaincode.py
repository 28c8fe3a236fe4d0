import json

import pytest

from fleetchain.chaincode import (
    AlreadyExists,
    BatteryDocking,
    Contract,
    ContractError,
    InvalidTransition,
    NotFound,
    ObjectRecorder,
    OutOfRange,
    PathRecorder,
    TimestampRegression,
    TxContext,
    default_contracts,
)
from fleetchain.ledger import StateView


class MiniState:
    """Apply write sets the way the ledger would, for contract-level tests."""

    def __init__(self):
        self.state = {}

    def view(self):
        return StateView(self.state)

    def run(self, contract, function, args):
        ctx = TxContext(self.view())
        result = contract.dispatch(ctx, function, args)
        for key, value in ctx.write_set:
            _, version = self.state.get(key, (b"", 0))
            self.state[key] = (value, version + 1)
        return result, ctx

    def doc(self, key):
        return json.loads(self.state[key][0])


@pytest.fixture
def mini():
    return MiniState()


def test_create_asset_fresh_key(mini):
    _, ctx = mini.run(Contract(), "CreateAsset", ["pose/dashgo/0001", '{"x": 1}'])
    assert ctx.write_set == [("pose/dashgo/0001", b'{"x":1}')]


def test_create_asset_existing_key(mini):
    mini.run(Contract(), "CreateAsset", ["k", "1"])
    with pytest.raises(AlreadyExists):
        mini.run(Contract(), "CreateAsset", ["k", "2"])


def test_create_then_read_in_later_tx(mini):
    mini.run(Contract(), "CreateAsset", ["k", '{"a": [1, 2]}'])
    value, ctx = mini.run(Contract(), "ReadAsset", ["k"])
    assert value == {"a": [1, 2]}
    assert ctx.write_set == []
    assert ctx.read_set == [("k", 1)]


def test_read_missing(mini):
    with pytest.raises(NotFound):
        mini.run(Contract(), "ReadAsset", ["nope"])


def test_read_twice_same_snapshot_identical(mini):
    mini.run(Contract(), "CreateAsset", ["k", "7"])
    ctx = TxContext(mini.view())
    c = Contract()
    assert c.dispatch(ctx, "ReadAsset", ["k"]) == c.dispatch(ctx, "ReadAsset", ["k"])
    assert ctx.read_set == [("k", 1)]  # second read hits the recorded key once


def test_update_asset(mini):
    mini.run(Contract(), "CreateAsset", ["k", "1"])
    mini.run(Contract(), "UpdateAsset", ["k", "2"])
    assert mini.state["k"] == (b"2", 2)


def test_update_missing(mini):
    with pytest.raises(NotFound):
        mini.run(Contract(), "UpdateAsset", ["k", "1"])


def test_update_identical_value_still_writes(mini):
    mini.run(Contract(), "CreateAsset", ["k", "1"])
    _, ctx = mini.run(Contract(), "UpdateAsset", ["k", "1"])
    assert ctx.write_set == [("k", b"1")]
    assert mini.state["k"][1] == 2


def test_unknown_function(mini):
    with pytest.raises(ContractError):
        mini.run(Contract(), "Demolish", [])


def test_record_path_first_pose_seq_zero(mini):
    _, ctx = mini.run(PathRecorder(), "RecordPath", ["tello", "100", "1", "2", "3"])
    assert ctx.write_set[0][0] == "path/tello/00000000"


def test_record_path_300_poses(mini):
    recorder = PathRecorder()
    for i in range(300):
        mini.run(recorder, "RecordPath", ["dashgo", str(i * 20), "1", "2", "0"])
    keys = sorted(k for k in mini.state if k.startswith("path/dashgo/"))
    assert len(keys) == 300
    assert keys[0].endswith("00000000")
    assert keys[-1].endswith("00000299")
    assert [int(k.rsplit("/", 1)[1]) for k in keys] == list(range(300))


def test_record_path_timestamp_regression(mini):
    recorder = PathRecorder()
    mini.run(recorder, "RecordPath", ["tello", "100", "1", "2", "3"])
    with pytest.raises(TimestampRegression):
        mini.run(recorder, "RecordPath", ["tello", "99", "1", "2", "3"])
    # equal timestamps are allowed
    mini.run(recorder, "RecordPath", ["tello", "100", "1", "2", "3"])


def test_record_object_new_and_upsert(mini):
    recorder = ObjectRecorder()
    mini.run(recorder, "RecordObject",
             ["chair:1:2:0", "chair", "1.0", "2.1", "0.5", "tello", "100"])
    mini.run(recorder, "RecordObject",
             ["chair:1:2:0", "chair", "1.1", "2.0", "0.5", "dashgo", "900"])
    keys = [k for k in mini.state if k.startswith("object/")]
    assert keys == ["object/chair:1:2:0"]
    doc = mini.doc("object/chair:1:2:0")
    assert doc["detector"] == "dashgo" and doc["t"] == 900
    assert mini.state["object/chair:1:2:0"][1] == 2


def test_record_object_empty_id(mini):
    with pytest.raises(ContractError):
        mini.run(ObjectRecorder(), "RecordObject", ["", "chair", "1", "2", "3", "x", "1"])


def battery_with_config(mini, threshold="0.30"):
    contract = BatteryDocking()
    mini.run(contract, "Init", [threshold, "4.0", "2.5", "1.0"])
    return contract


def test_battery_below_threshold_orders_docking(mini):
    contract = battery_with_config(mini)
    mini.run(contract, "UpdateBattery", ["tello", "0.29", "75000"])
    order = mini.doc("docking/order")
    assert order["status"] == "ordered"
    assert order["rendezvous"] == {"x": 4.0, "y": 2.5, "z": 1.0}
    assert order["issued_at"] == 75000


def test_battery_exactly_threshold_no_order(mini):
    contract = battery_with_config(mini)
    mini.run(contract, "UpdateBattery", ["tello", "0.30", "75000"])
    assert "docking/order" not in mini.state


def test_battery_no_second_order(mini):
    contract = battery_with_config(mini)
    mini.run(contract, "UpdateBattery", ["tello", "0.29", "75000"])
    mini.run(contract, "UpdateBattery", ["tello", "0.25", "76000"])
    assert mini.doc("docking/order")["issued_at"] == 75000
    assert mini.state["docking/order"][1] == 1
    assert mini.doc("battery/tello")["level"] == 0.25


def test_battery_out_of_range(mini):
    contract = battery_with_config(mini)
    with pytest.raises(OutOfRange):
        mini.run(contract, "UpdateBattery", ["tello", "1.2", "0"])
    with pytest.raises(OutOfRange):
        mini.run(contract, "UpdateBattery", ["tello", "-0.1", "0"])


def test_battery_without_init_skips_docking(mini):
    mini.run(BatteryDocking(), "UpdateBattery", ["tello", "0.05", "10"])
    assert "docking/order" not in mini.state


def test_advance_docking_legal_successor(mini):
    contract = battery_with_config(mini)
    mini.run(contract, "UpdateBattery", ["tello", "0.29", "75000"])
    mini.run(contract, "AdvanceDocking", ["accepted"])
    assert mini.doc("docking/order")["status"] == "accepted"


def test_advance_docking_skip_is_invalid(mini):
    contract = battery_with_config(mini)
    mini.run(contract, "UpdateBattery", ["tello", "0.29", "75000"])
    with pytest.raises(InvalidTransition):
        mini.run(contract, "AdvanceDocking", ["docked"])


def test_advance_docking_full_chain_is_four_writes(mini):
    contract = battery_with_config(mini)
    mini.run(contract, "UpdateBattery", ["tello", "0.29", "75000"])
    for status in ("accepted", "docking", "docked"):
        mini.run(contract, "AdvanceDocking", [status])
    assert mini.doc("docking/order")["status"] == "docked"
    assert mini.state["docking/order"][1] == 4
    with pytest.raises(InvalidTransition):
        mini.run(contract, "AdvanceDocking", ["docked"])


def test_query_all(mini):
    c = Contract()
    mini.run(c, "CreateAsset", ["object/b", "2"])
    mini.run(c, "CreateAsset", ["object/a", "1"])
    mini.run(c, "CreateAsset", ["path/x", "3"])
    result, _ = mini.run(c, "QueryAll", ["object/"])
    assert [(a.key, a.value, a.version) for a in result] == \
        [("object/a", 1, 1), ("object/b", 2, 1)]
    empty, _ = mini.run(c, "QueryAll", ["missing/"])
    assert empty == []


def test_contract_purity(mini):
    contract = battery_with_config(mini)
    view = mini.view()
    runs = []
    for _ in range(2):
        ctx = TxContext(view)
        contract.dispatch(ctx, "UpdateBattery", ["tello", "0.25", "80000"])
        runs.append((ctx.read_set, ctx.write_set))
    assert runs[0] == runs[1]


def test_default_contracts_names():
    names = set(default_contracts(uav="tello", ugv="dashgo"))
    assert names == {"battery", "tello-path", "dashgo-path",
                     "tello-objects", "dashgo-objects"}
