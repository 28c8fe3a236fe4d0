"""Mission configuration: schema, validation, YAML loading, defaults.

A scenario fixes everything a run depends on, including the RNG seed,
so two runs of the same scenario are byte-identical. `load_scenario`
raises ScenarioError with the offending field name; the CLI turns that
into exit code 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import yaml

from .ledger import LedgerConfig


class ScenarioError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class Room:
    width: float = 8.0
    depth: float = 5.0
    height: float = 3.0


@dataclass
class RobotSpec:
    robot_id: str
    kind: str  # ugv | uav
    org: str
    start: tuple
    waypoints: list
    v_max: float


@dataclass
class ObjectSpec:
    category: str
    position: tuple


@dataclass
class Detection:
    range_m: float = 2.0
    fov_rad: float = math.radians(70.0)
    cooldown_ms: int = 2000
    noise_sigma: float = 0.05


@dataclass
class Rates:
    path_hz: float = 50.0
    battery_hz: float = 10.0
    detect_forward_hz: float = 5.0


@dataclass
class Battery:
    initial: float = 0.6
    drain_per_s: float = 0.004
    threshold: float = 0.30
    charge_per_s: float = 0.01


@dataclass
class Docking:
    r_rdv: float = 0.5
    d_dock: float = 0.15
    deck_height: float = 0.1


@dataclass
class Uwb:
    sigma: float = 0.1
    global_anchors: object = "room_corners"  # keyword or [[x, y, z], ...]
    mounted_radius: float = 0.4


@dataclass
class Scenario:
    seed: int = 42
    dt: int = 20  # ms
    duration: int = 200_000  # ms
    room: Room = field(default_factory=Room)
    robots: list = field(default_factory=list)
    objects: list = field(default_factory=list)
    detection: Detection = field(default_factory=Detection)
    rates: Rates = field(default_factory=Rates)
    battery: Battery = field(default_factory=Battery)
    rendezvous: tuple = (4.0, 2.5, 1.0)
    docking: Docking = field(default_factory=Docking)
    uwb: Uwb = field(default_factory=Uwb)
    ledger: LedgerConfig = field(default_factory=LedgerConfig)
    channel: str = "inventory"
    waypoint_tolerance: float = 0.15

    def validate(self) -> None:
        if self.seed < 0:
            raise ScenarioError("seed", "must be >= 0")
        if self.dt <= 0:
            raise ScenarioError("dt", "must be a positive number of milliseconds")
        if self.duration <= 0:
            raise ScenarioError("duration", "must be > 0")
        if self.duration % self.dt != 0:
            raise ScenarioError("duration", f"must be a multiple of dt={self.dt}")
        for name in ("width", "depth", "height"):
            if getattr(self.room, name) <= 0:
                raise ScenarioError(f"room.{name}", "must be > 0")
        if not self.robots:
            raise ScenarioError("robots", "at least one robot is required")
        kinds = [r.kind for r in self.robots]
        for i, robot in enumerate(self.robots):
            if robot.kind not in ("ugv", "uav"):
                raise ScenarioError(f"robots[{i}].kind", f"unknown kind {robot.kind!r}")
            if robot.v_max <= 0:
                raise ScenarioError(f"robots[{i}].v_max", "must be > 0")
            for j, wp in enumerate([robot.start] + list(robot.waypoints)):
                self._check_point(f"robots[{i}].waypoints[{j - 1}]" if j else
                                  f"robots[{i}].start", wp, allow_air=robot.kind == "uav")
        if "ugv" not in kinds or "uav" not in kinds:
            raise ScenarioError("robots", "mission needs one ugv and one uav")
        for i, obj in enumerate(self.objects):
            if not obj.category:
                raise ScenarioError(f"objects[{i}].category", "must be non-empty")
            self._check_point(f"objects[{i}].position", obj.position, allow_air=True)
        self._check_point("rendezvous", self.rendezvous, allow_air=True)
        for name in ("path_hz", "battery_hz", "detect_forward_hz"):
            hz = getattr(self.rates, name)
            if hz <= 0:
                raise ScenarioError(f"rates.{name}", "must be > 0")
            if hz > 1000.0 / self.dt:
                raise ScenarioError(f"rates.{name}",
                                    f"{hz} Hz is not schedulable with dt={self.dt} ms")
        for name in ("initial", "threshold"):
            v = getattr(self.battery, name)
            if not 0.0 <= v <= 1.0:
                raise ScenarioError(f"battery.{name}", "must be within [0, 1]")
        if self.battery.drain_per_s < 0 or self.battery.charge_per_s < 0:
            raise ScenarioError("battery.drain_per_s", "rates must be >= 0")
        if self.detection.range_m <= 0:
            raise ScenarioError("detection.range_m", "must be > 0")
        if not 0 < self.detection.fov_rad <= 2 * math.pi:
            raise ScenarioError("detection.fov_rad", "must be in (0, 2*pi]")
        if self.uwb.sigma < 0:
            raise ScenarioError("uwb.sigma", "must be >= 0")
        try:
            self.ledger.validate()
        except ValueError as exc:
            raise ScenarioError("ledger", str(exc)) from None

    def _check_point(self, name: str, point, allow_air: bool) -> None:
        if len(point) != 3:
            raise ScenarioError(name, "must be [x, y, z]")
        x, y, z = point
        if not (0 <= x <= self.room.width and 0 <= y <= self.room.depth):
            raise ScenarioError(name, f"({x}, {y}) outside the {self.room.width} x "
                                      f"{self.room.depth} m room")
        top = self.room.height if allow_air else 0.0
        if not 0 <= z <= top:
            raise ScenarioError(name, f"z={z} outside [0, {top}]")

    @property
    def n_ticks(self) -> int:
        return self.duration // self.dt

    def uav(self) -> RobotSpec:
        return next(r for r in self.robots if r.kind == "uav")

    def ugv(self) -> RobotSpec:
        return next(r for r in self.robots if r.kind == "ugv")


_V_MAX = {"ugv": 0.5, "uav": 1.0}


def default_scenario(seed: int = 42) -> Scenario:
    """Warehouse sweep: two shelf rows, six objects each, docking mid-mission."""
    shelf_cats = ["bottle", "chair", "laptop", "book", "cup", "potted plant"]
    xs = [1.0, 2.2, 3.4, 4.6, 5.8, 7.0]
    objects = []
    for row, y in enumerate((1.25, 3.75)):
        for i, x in enumerate(xs):
            z = 0.5 if (i + row) % 2 == 0 else 1.1
            objects.append(ObjectSpec(category=shelf_cats[(i + 3 * row) % len(shelf_cats)],
                                      position=(x, y, z)))
    robots = [
        RobotSpec(robot_id="dashgo", kind="ugv", org="Org1",
                  start=(0.5, 0.6, 0.0),
                  waypoints=[(7.5, 0.6, 0.0), (7.5, 1.9, 0.0), (0.5, 1.9, 0.0)],
                  v_max=_V_MAX["ugv"]),
        RobotSpec(robot_id="tello", kind="uav", org="Org2",
                  start=(0.5, 3.1, 1.2),
                  waypoints=[(7.5, 3.1, 1.2), (7.5, 4.4, 1.2), (0.5, 4.4, 1.2)],
                  v_max=_V_MAX["uav"]),
    ]
    scenario = Scenario(seed=seed, robots=robots, objects=objects)
    scenario.validate()
    return scenario


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario", "top level must be a mapping")
    known = {"seed", "dt_ms", "duration_ms", "room", "robots", "objects", "detection",
             "rates", "battery", "rendezvous", "docking", "uwb", "ledger", "channel",
             "waypoint_tolerance"}
    for key in doc:
        if key not in known:
            raise ScenarioError(key, "unknown scenario field")
    scenario = Scenario()
    scenario.seed = int(doc.get("seed", scenario.seed))
    scenario.dt = int(doc.get("dt_ms", scenario.dt))
    scenario.duration = int(doc.get("duration_ms", scenario.duration))
    if "room" in doc:
        scenario.room = _sub(Room, doc["room"], "room")
    robots = doc.get("robots")
    if robots is not None:
        scenario.robots = []
        for i, r in enumerate(robots):
            extra = set(r) - {"robot_id", "kind", "org", "start", "waypoints", "v_max"}
            if extra:
                raise ScenarioError(f"robots[{i}].{extra.pop()}", "unknown robot field")
            try:
                scenario.robots.append(RobotSpec(
                    robot_id=str(r["robot_id"]),
                    kind=str(r["kind"]),
                    org=str(r.get("org", f"Org{i + 1}")),
                    start=tuple(float(v) for v in r["start"]),
                    waypoints=[tuple(float(v) for v in wp) for wp in r.get("waypoints", [])],
                    v_max=float(r.get("v_max", _V_MAX.get(r.get("kind"), 0.5))),
                ))
            except KeyError as exc:
                raise ScenarioError(f"robots[{i}].{exc.args[0]}", "missing") from None
    objects = doc.get("objects")
    if objects is not None:
        scenario.objects = []
        for i, o in enumerate(objects):
            try:
                scenario.objects.append(ObjectSpec(
                    category=str(o["category"]),
                    position=tuple(float(v) for v in o["position"]),
                ))
            except KeyError as exc:
                raise ScenarioError(f"objects[{i}].{exc.args[0]}", "missing") from None
    for name, cls in (("detection", Detection), ("rates", Rates), ("battery", Battery),
                      ("docking", Docking), ("uwb", Uwb)):
        if name in doc:
            setattr(scenario, name, _sub(cls, doc[name], name))
    if "rendezvous" in doc:
        scenario.rendezvous = tuple(float(v) for v in doc["rendezvous"])
    if "ledger" in doc:
        led = doc["ledger"]
        extra = set(led) - {"batch_size", "batch_timeout_ms", "validation_budget_ms",
                            "endorsement"}
        if extra:
            raise ScenarioError(f"ledger.{extra.pop()}", "unknown ledger field")
        scenario.ledger = LedgerConfig(
            batch_size=int(led.get("batch_size", 10)),
            batch_timeout=int(led.get("batch_timeout_ms", 1000)),
            channels=(str(doc.get("channel", "inventory")),),
            endorsement=str(led.get("endorsement", "any_org")),
            validation_budget=int(led.get("validation_budget_ms", 1)),
        )
    scenario.channel = str(doc.get("channel", scenario.channel))
    scenario.waypoint_tolerance = float(doc.get("waypoint_tolerance",
                                                scenario.waypoint_tolerance))
    scenario.validate()
    return scenario


def _sub(cls, doc: dict, name: str):
    if not isinstance(doc, dict):
        raise ScenarioError(name, "must be a mapping")
    fields = set(cls.__dataclass_fields__)
    unknown = set(doc) - fields
    if unknown:
        raise ScenarioError(f"{name}.{unknown.pop()}", "unknown field")
    kwargs = {}
    for key, value in doc.items():
        default = cls.__dataclass_fields__[key].default
        if isinstance(default, bool):
            kwargs[key] = bool(value)
        elif isinstance(default, int):
            kwargs[key] = int(value)
        elif isinstance(default, float):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return scenario_from_dict(doc)


def dump_scenario(scenario: Scenario, path) -> None:
    doc = {
        "seed": scenario.seed,
        "dt_ms": scenario.dt,
        "duration_ms": scenario.duration,
        "room": {"width": scenario.room.width, "depth": scenario.room.depth,
                 "height": scenario.room.height},
        "robots": [
            {"robot_id": r.robot_id, "kind": r.kind, "org": r.org,
             "start": list(r.start), "waypoints": [list(w) for w in r.waypoints],
             "v_max": r.v_max}
            for r in scenario.robots
        ],
        "objects": [{"category": o.category, "position": list(o.position)}
                    for o in scenario.objects],
        "detection": {"range_m": scenario.detection.range_m,
                      "fov_rad": scenario.detection.fov_rad,
                      "cooldown_ms": scenario.detection.cooldown_ms,
                      "noise_sigma": scenario.detection.noise_sigma},
        "rates": {"path_hz": scenario.rates.path_hz,
                  "battery_hz": scenario.rates.battery_hz,
                  "detect_forward_hz": scenario.rates.detect_forward_hz},
        "battery": {"initial": scenario.battery.initial,
                    "drain_per_s": scenario.battery.drain_per_s,
                    "threshold": scenario.battery.threshold,
                    "charge_per_s": scenario.battery.charge_per_s},
        "rendezvous": list(scenario.rendezvous),
        "docking": {"r_rdv": scenario.docking.r_rdv, "d_dock": scenario.docking.d_dock,
                    "deck_height": scenario.docking.deck_height},
        "uwb": {"sigma": scenario.uwb.sigma, "global_anchors": scenario.uwb.global_anchors,
                "mounted_radius": scenario.uwb.mounted_radius},
        "ledger": {"batch_size": scenario.ledger.batch_size,
                   "batch_timeout_ms": scenario.ledger.batch_timeout,
                   "validation_budget_ms": scenario.ledger.validation_budget,
                   "endorsement": scenario.ledger.endorsement},
        "channel": scenario.channel,
        "waypoint_tolerance": scenario.waypoint_tolerance,
    }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
