"""Smart-contract engine and the mission's five contracts.

Contracts are deterministic: they see only a state view and string
arguments (time always arrives as an argument, never from a clock), and
they describe their effects as read/write sets which the ledger validates
and applies at commit time.

Key namespaces on the shared channel:
    path/<robot>/<seq>   one pose sample, seq zero-padded so keys sort
    object/<object_id>   inventory row, upserted on re-detection
    battery/<robot>      {robot_id, level, t}
    docking/order        {status, rendezvous, issued_at}
    config/docking       {threshold, rendezvous} written by Init
"""

from __future__ import annotations

from dataclasses import dataclass

from .canonical import canonical_json, parse_json


class ContractError(Exception):
    """Execution failure; the transaction is rejected before ordering."""


class AlreadyExists(ContractError):
    pass


class NotFound(ContractError):
    pass


class TimestampRegression(ContractError):
    pass


class OutOfRange(ContractError):
    pass


class InvalidTransition(ContractError):
    pass


DOCKING_SEQUENCE = ("none", "ordered", "accepted", "docking", "docked")

ORDER_KEY = "docking/order"
DOCKING_CONFIG_KEY = "config/docking"


@dataclass
class Asset:
    key: str
    value: object
    version: int


class TxContext:
    """Execution context recording the read and write sets of one transaction.

    Reads of a key written earlier in the same transaction return the
    pending value and are not added to the read set; absent keys read as
    version 0. Prefix scans are not version-tracked (no phantom
    protection), matching the validation model.
    """

    def __init__(self, view):
        self._view = view
        self.read_set: list = []
        self.write_set: list = []
        self._written: dict = {}
        self._read_keys: set = set()

    def get_state(self, key: str):
        if key in self._written:
            return self._written[key]
        entry = self._view.get(key)
        if key not in self._read_keys:
            self._read_keys.add(key)
            self.read_set.append((key, entry[1] if entry else 0))
        return entry[0] if entry else None

    def put_state(self, key: str, value: bytes) -> None:
        if key in self._written:
            # replace the earlier write in place
            for i, (k, _) in enumerate(self.write_set):
                if k == key:
                    self.write_set[i] = (key, value)
                    break
        else:
            self.write_set.append((key, value))
        self._written[key] = value

    def get_json(self, key: str):
        raw = self.get_state(key)
        return None if raw is None else parse_json(raw)

    def put_json(self, key: str, doc) -> None:
        self.put_state(key, canonical_json(doc))

    def scan(self, prefix: str):
        merged = {key: entry for key, entry in self._view.scan(prefix)}
        for key, value in self._written.items():
            if key.startswith(prefix):
                base = merged.get(key)
                merged[key] = (value, base[1] if base else 0)
        return [(key,) + merged[key] for key in sorted(merged)]

    def last_under(self, prefix: str):
        """Greatest key with this prefix, including own pending writes."""
        best = self._view.last_under(prefix)
        for key in self._written:
            if key.startswith(prefix) and (best is None or key > best):
                best = key
        return best


def _num(value: str, name: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ContractError(f"argument {name} is not a number: {value!r}") from None


def _time(value: str, name: str = "t") -> int:
    try:
        return int(value)
    except ValueError:
        raise ContractError(f"argument {name} is not an integer time: {value!r}") from None


def _need(args: list, n: int, function: str) -> None:
    if len(args) != n:
        raise ContractError(f"{function} takes {n} args, got {len(args)}")


class Contract:
    """Base contract: generic asset CRUD plus a name->method dispatch table."""

    functions = ("CreateAsset", "ReadAsset", "UpdateAsset", "QueryAll")

    def dispatch(self, ctx: TxContext, function: str, args: list):
        if function not in self.functions:
            raise ContractError(f"unknown function {function!r}")
        return getattr(self, "fn_" + function)(ctx, list(args))

    def fn_CreateAsset(self, ctx: TxContext, args: list):
        _need(args, 2, "CreateAsset")
        key, raw = args
        if not key:
            raise ContractError("asset key must be non-empty")
        if ctx.get_state(key) is not None:
            raise AlreadyExists(f"asset {key!r} already exists")
        ctx.put_json(key, parse_json(raw.encode("utf-8")))

    def fn_ReadAsset(self, ctx: TxContext, args: list):
        _need(args, 1, "ReadAsset")
        doc = ctx.get_json(args[0])
        if doc is None:
            raise NotFound(f"asset {args[0]!r} does not exist")
        return doc

    def fn_UpdateAsset(self, ctx: TxContext, args: list):
        _need(args, 2, "UpdateAsset")
        key, raw = args
        if ctx.get_state(key) is None:
            raise NotFound(f"asset {key!r} does not exist")
        ctx.put_json(key, parse_json(raw.encode("utf-8")))

    def fn_QueryAll(self, ctx: TxContext, args: list):
        _need(args, 1, "QueryAll")
        return [Asset(key=k, value=parse_json(raw), version=ver)
                for k, raw, ver in ctx.scan(args[0])]


class PathRecorder(Contract):
    """Stores one robot path as an append-only sequence of pose assets.

    The sequence number comes from the latest existing record, found by
    an ordered range read; each record is written once and never
    rewritten, so concurrent recorders in the same block stay
    conflict-free under first-writer-wins validation.
    """

    functions = Contract.functions + ("RecordPath",)

    def fn_RecordPath(self, ctx: TxContext, args: list):
        _need(args, 5, "RecordPath")
        robot_id = args[0]
        if not robot_id:
            raise ContractError("robot_id must be non-empty")
        t = _time(args[1])
        x, y, z = (_num(a, n) for a, n in zip(args[2:5], "xyz"))
        prefix = f"path/{robot_id}/"
        prev_key = ctx.last_under(prefix)
        seq = 0
        if prev_key is not None:
            prev = ctx.get_json(prev_key)
            if t < prev["t"]:
                raise TimestampRegression(
                    f"pose at t={t} precedes last recorded t={prev['t']} for {robot_id}")
            seq = int(prev_key[len(prefix):]) + 1
        ctx.put_json(f"{prefix}{seq:08d}",
                     {"robot_id": robot_id, "t": t, "x": x, "y": y, "z": z})


class ObjectRecorder(Contract):
    """Keeps one inventory row per detected object, upserted by object_id."""

    functions = Contract.functions + ("RecordObject",)

    def fn_RecordObject(self, ctx: TxContext, args: list):
        _need(args, 7, "RecordObject")
        object_id, category = args[0], args[1]
        if not object_id:
            raise ContractError("object_id must be non-empty")
        x, y, z = (_num(a, n) for a, n in zip(args[2:5], "xyz"))
        detector = args[5]
        t = _time(args[6])
        key = f"object/{object_id}"
        ctx.get_state(key)  # version pinned whether present or absent
        ctx.put_json(key, {"object_id": object_id, "category": category,
                           "x": x, "y": y, "z": z, "detector": detector, "t": t})


class BatteryDocking(Contract):
    """Battery level recorder plus the docking decision state machine.

    Init writes the docking configuration (threshold, rendezvous) into
    state so that replaying the block log needs nothing outside the log.
    The first battery update below the threshold creates the docking
    order; AdvanceDocking walks it through its linear status sequence.
    """

    functions = Contract.functions + ("Init", "UpdateBattery", "AdvanceDocking")

    def fn_Init(self, ctx: TxContext, args: list):
        _need(args, 4, "Init")
        threshold = _num(args[0], "threshold")
        if not 0.0 <= threshold <= 1.0:
            raise OutOfRange(f"threshold {threshold} outside [0, 1]")
        if ctx.get_state(DOCKING_CONFIG_KEY) is not None:
            raise AlreadyExists("docking config already initialized")
        rx, ry, rz = (_num(a, n) for a, n in zip(args[1:4], ("rx", "ry", "rz")))
        ctx.put_json(DOCKING_CONFIG_KEY,
                     {"threshold": threshold, "rendezvous": {"x": rx, "y": ry, "z": rz}})

    def fn_UpdateBattery(self, ctx: TxContext, args: list):
        _need(args, 3, "UpdateBattery")
        robot_id = args[0]
        level = _num(args[1], "level")
        t = _time(args[2])
        if not 0.0 <= level <= 1.0:
            raise OutOfRange(f"battery level {level} outside [0, 1]")
        ctx.put_json(f"battery/{robot_id}", {"robot_id": robot_id, "level": level, "t": t})
        config = ctx.get_json(DOCKING_CONFIG_KEY)
        if config is None:
            return  # docking disabled until Init has committed
        status = self._status(ctx)
        if level < config["threshold"] and status == "none":
            ctx.put_json(ORDER_KEY, {"status": "ordered",
                                     "rendezvous": config["rendezvous"],
                                     "issued_at": t})

    def fn_AdvanceDocking(self, ctx: TxContext, args: list):
        _need(args, 1, "AdvanceDocking")
        new_status = args[0]
        if new_status not in DOCKING_SEQUENCE:
            raise InvalidTransition(f"unknown docking status {new_status!r}")
        current = self._status(ctx)
        idx = DOCKING_SEQUENCE.index(current)
        if DOCKING_SEQUENCE.index(new_status) != idx + 1:
            raise InvalidTransition(f"cannot advance docking {current} -> {new_status}")
        order = ctx.get_json(ORDER_KEY)
        if order is None:
            config = ctx.get_json(DOCKING_CONFIG_KEY)
            if config is None:
                raise ContractError("docking config missing; run Init first")
            order = {"rendezvous": config["rendezvous"], "issued_at": -1}
        order["status"] = new_status
        ctx.put_json(ORDER_KEY, order)

    def _status(self, ctx: TxContext) -> str:
        order = ctx.get_json(ORDER_KEY)
        return order["status"] if order else "none"


def default_contracts(uav: str = "tello", ugv: str = "dashgo") -> dict:
    """The five mission chaincodes keyed by their installed names."""
    return {
        "battery": BatteryDocking(),
        f"{uav}-path": PathRecorder(),
        f"{ugv}-path": PathRecorder(),
        f"{uav}-objects": ObjectRecorder(),
        f"{ugv}-objects": ObjectRecorder(),
    }


def contract_for_chaincode(name: str) -> Contract:
    """Rebuild the contract a chaincode name refers to, for log replay."""
    if name == "battery":
        return BatteryDocking()
    if name.endswith("-path"):
        return PathRecorder()
    if name.endswith("-objects"):
        return ObjectRecorder()
    return Contract()
