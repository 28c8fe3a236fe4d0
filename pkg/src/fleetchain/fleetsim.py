"""Deterministic discrete-time simulation of the two-robot mission.

Each tick advances the robots, runs UWB ranging and multilateration,
evaluates the detection model, submits the scheduled ledger traffic and
lets the orderer cut and commit due blocks. Robots only ever react to
committed chain state (the docking order and each other's last committed
pose), never to in-flight transactions, so every cooperative action is
chain-mediated and timestamps prove it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import localization as loc
from .canonical import parse_json
from .chaincode import default_contracts
from .ledger import Ledger
from .scenario import Scenario

NAV_ALPHA = 0.25  # EMA weight of each new position fix in the nav estimate
UGV_TAG_HEIGHT = 0.2  # tag mast height on the ground robot, metres
OBJECT_ID_CELL = 0.5  # grid cell for deduplicating detections, metres

STREAM_UWB = 1
STREAM_DETECT = 2

INSPECT = "inspect"
TO_RENDEZVOUS = "to_rendezvous"
AWAIT_DOCK = "await_dock"
DOCKING = "docking"
DOCKED = "docked"


def noise_stream(seed: int, purpose: int, index: int):
    """The documented RNG stream: default_rng seeded with (seed, purpose, index).

    purpose is STREAM_UWB or STREAM_DETECT; index is the robot's position
    in the scenario robot list.
    """
    return np.random.default_rng((seed, purpose, index))


def object_identifier(category: str, position) -> str:
    """Stable id from category and the 0.5 m grid cell of the true position."""
    ix, iy, iz = (math.floor(c / OBJECT_ID_CELL) for c in position)
    return f"{category}:{ix}:{iy}:{iz}"


@dataclass
class DetectionEvent:
    t: int
    detector: str
    category: str
    estimated_object_position: tuple
    object_id: str


@dataclass
class RobotState:
    robot_id: str
    kind: str
    true_pose: np.ndarray
    heading: float = 0.0
    battery: float = 1.0
    mode: str = INSPECT
    loc_mode: str = "global"
    est_pose: loc.PositionEstimate | None = None
    nav: np.ndarray = None
    v_max: float = 0.5
    waypoints: list = field(default_factory=list)
    wp_idx: int = 0


class World:
    """Owns the ledger, the robots and the anchor table for one mission."""

    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.scenario = scenario
        self.now = 0
        self.tick = 0
        self.events: list = []  # (t_ms, robot_id, event, detail)
        self.trajectory: list = []  # (t_ms, robot_id, true xyz, nav xyz)
        self.detections: list = []
        self._sched: dict = {}
        self._cooldown: dict = {}
        self._last_order_status = "none"
        self._order_raw = None
        self._order_parsed = None
        self._accepted_sent = False
        self._docking_sent = False
        self._docked_sent = False
        self._dock_time = None
        self._dock_level = None

        self.ledger = Ledger(scenario.ledger)
        self.channel = scenario.channel
        self._bootstrap_network()
        self.robots = [self._make_robot(spec) for spec in scenario.robots]
        self._uav = next(r for r in self.robots if r.kind == "uav")
        self._ugv = next(r for r in self.robots if r.kind == "ugv")
        self._rng_uwb = {spec.robot_id: noise_stream(scenario.seed, STREAM_UWB, i)
                         for i, spec in enumerate(scenario.robots)}
        self._rng_detect = {spec.robot_id: noise_stream(scenario.seed, STREAM_DETECT, i)
                            for i, spec in enumerate(scenario.robots)}
        self.anchors = self._build_anchors()
        self.anchors.update_carrier(self._ugv.robot_id, self._ugv.true_pose,
                                    self._ugv.heading)
        self._deck_h = scenario.docking.deck_height

    # -- construction ---------------------------------------------------

    def _bootstrap_network(self):
        s = self.scenario
        ledger = self.ledger
        self.identities = {}
        for spec in s.robots:
            self.identities[spec.robot_id] = ledger.register_identity(
                spec.org, spec.robot_id, "robot")
        for spec in s.robots:
            ledger.register_identity(spec.org, f"peer0.{spec.org}", "peer")
        operator_org = s.robots[0].org
        self.operator = ledger.register_identity(operator_org, "operator", "operator")
        ledger.register_identity("OrdererOrg", "orderer0", "orderer")
        ledger.create_channel(self.channel, sorted({spec.org for spec in s.robots}))
        uav = s.uav().robot_id
        ugv = s.ugv().robot_id
        for name, contract in default_contracts(uav=uav, ugv=ugv).items():
            ledger.install_chaincode(self.channel, name, contract)
        rx, ry, rz = s.rendezvous
        ledger.submit(self.operator, self.channel, "battery", "Init",
                      [f"{s.battery.threshold:.6f}", f"{rx:.6f}", f"{ry:.6f}", f"{rz:.6f}"],
                      now=0)

    def _make_robot(self, spec) -> RobotState:
        start = np.asarray(spec.start, dtype=np.float64)
        battery = self.scenario.battery.initial if spec.kind == "uav" else 1.0
        return RobotState(
            robot_id=spec.robot_id,
            kind=spec.kind,
            true_pose=start.copy(),
            nav=start.copy(),
            battery=battery,
            v_max=spec.v_max,
            waypoints=[np.asarray(w, dtype=np.float64) for w in spec.waypoints],
        )

    def _build_anchors(self) -> loc.AnchorTable:
        s = self.scenario
        if s.uwb.global_anchors == "room_corners":
            fixed = loc.room_corner_anchors(s.room.width, s.room.depth)
        else:
            fixed = [loc.Anchor(anchor_id=f"g{i}", position=np.asarray(p, dtype=np.float64))
                     for i, p in enumerate(s.uwb.global_anchors)]
        mounted = loc.deck_ring_anchors(self._ugv.robot_id, s.docking.deck_height,
                                        radius=s.uwb.mounted_radius)
        tags = {self._uav.robot_id: ("global", "relative"),
                self._ugv.robot_id: ("global",)}
        return loc.AnchorTable(fixed + mounted, tags)

    # -- per-tick phases -------------------------------------------------

    def step(self) -> None:
        s = self.scenario
        self.now += s.dt
        self.tick += 1
        now = self.now
        self._update_battery(now)
        for robot in self.robots:
            self._move(robot)
        self.anchors.update_carrier(self._ugv.robot_id, self._ugv.true_pose,
                                    self._ugv.heading)
        for robot in self.robots:
            self._localize(robot, now)
        new_detections = []
        if self._crossed("detect", s.rates.detect_forward_hz, now):
            for robot in self.robots:
                if robot.mode != DOCKED:
                    new_detections.extend(self._detect(robot, now))
        self._submit_scheduled(now, new_detections)
        self.ledger.advance(now)
        self._docking_controller(now)
        for robot in self.robots:
            t = robot.true_pose
            n = robot.nav
            self.trajectory.append((now, robot.robot_id, t[0], t[1], t[2],
                                    n[0], n[1], n[2]))

    def run(self) -> None:
        for _ in range(self.scenario.n_ticks):
            self.step()
        # mission over: stop the robots but let the ledger finish committing
        self.now = self.ledger.drain(self.now, self.scenario.dt)

    # -- battery -----------------------------------------------------------

    def _update_battery(self, now: int) -> None:
        uav = self._uav
        b = self.scenario.battery
        if uav.mode == DOCKED:
            uav.battery = min(1.0, self._dock_level
                              + b.charge_per_s * (now - self._dock_time) / 1000.0)
        else:
            uav.battery = max(0.0, b.initial - b.drain_per_s * now / 1000.0)

    # -- motion ------------------------------------------------------------

    def _target(self, robot: RobotState):
        if robot.mode == INSPECT:
            if robot.wp_idx >= len(robot.waypoints):
                return None
            return robot.waypoints[robot.wp_idx]
        if robot.mode in (TO_RENDEZVOUS, AWAIT_DOCK):
            rx, ry, rz = self._rendezvous_point()
            return np.array([rx, ry, 0.0 if robot.kind == "ugv" else rz])
        if robot.mode == DOCKING and robot.kind == "uav":
            deck = self._ugv.true_pose.copy()
            deck[2] += self._deck_h
            return deck
        if robot.mode == DOCKING and robot.kind == "ugv":
            rx, ry, _ = self._rendezvous_point()
            return np.array([rx, ry, 0.0])
        return None

    def _rendezvous_point(self):
        order = self._order_doc()
        if order is not None:
            r = order["rendezvous"]
            return r["x"], r["y"], r["z"]
        return self.scenario.rendezvous

    def _move(self, robot: RobotState) -> None:
        if robot.mode == DOCKED:
            return
        nav = robot.nav
        if robot.mode == INSPECT and robot.wp_idx < len(robot.waypoints):
            wp = robot.waypoints[robot.wp_idx]
            gap = math.sqrt((wp[0] - nav[0]) ** 2 + (wp[1] - nav[1]) ** 2
                            + (wp[2] - nav[2]) ** 2)
            if gap <= self.scenario.waypoint_tolerance:
                robot.wp_idx += 1
        target = self._target(robot)
        if target is None:
            return
        dx = target[0] - nav[0]
        dy = target[1] - nav[1]
        dz = 0.0 if robot.kind == "ugv" else target[2] - nav[2]
        dist = math.sqrt(dx * dx + dy * dy + dz * dz)
        if dist < 1e-9:
            return
        step = min(robot.v_max * self.scenario.dt / 1000.0, dist)
        pose = robot.true_pose
        pose[0] += dx / dist * step
        pose[1] += dy / dist * step
        if robot.kind == "ugv":
            pose[2] = 0.0
        else:
            pose[2] = min(max(pose[2] + dz / dist * step, 0.0), self.scenario.room.height)
        if math.hypot(dx, dy) > 1e-6:
            robot.heading = math.atan2(dy, dx)

    # -- localization --------------------------------------------------------

    def _tag_position(self, robot: RobotState) -> np.ndarray:
        if robot.kind == "ugv":
            tag = robot.true_pose.copy()
            tag[2] += UGV_TAG_HEIGHT
            return tag
        return robot.true_pose

    def _localize(self, robot: RobotState, now: int) -> None:
        if robot.mode == DOCKED:
            return
        enabled = self.anchors.enabled_for(robot.robot_id)
        if not enabled:
            return  # beacons for this tag are powered off; estimate freezes
        sets = {a.set for a in enabled}
        assert len(sets) == 1, "anchor enablement mixed sets"
        ranges = loc.measure_ranges(self._tag_position(robot), enabled,
                                    self.scenario.uwb.sigma,
                                    self._rng_uwb[robot.robot_id], t=now)
        guess = robot.nav.copy()
        fixed_z = None
        if robot.kind == "ugv":
            fixed_z = UGV_TAG_HEIGHT
            guess[2] = UGV_TAG_HEIGHT
        try:
            est = loc.multilaterate(ranges, enabled, initial_guess=guess, fixed_z=fixed_z)
        except loc.DegenerateGeometry:
            self.events.append((now, robot.robot_id, "loc_degenerate", ""))
            return
        robot.est_pose = est
        fix = est.position.copy()
        if robot.kind == "ugv":
            fix[2] = 0.0  # report the ground pose, not the tag mast
        robot.nav = (1.0 - NAV_ALPHA) * robot.nav + NAV_ALPHA * fix
        robot.loc_mode = ("relative" if self.anchors.mode_of(robot.robot_id) == "relative"
                          else "global")

    # -- detection -------------------------------------------------------------

    def _detect(self, robot: RobotState, now: int) -> list:
        s = self.scenario
        out = []
        half_fov = s.detection.fov_rad / 2.0
        px, py, pz = robot.true_pose
        for idx, obj in enumerate(s.objects):
            ox, oy, oz = obj.position
            dist = math.sqrt((ox - px) ** 2 + (oy - py) ** 2 + (oz - pz) ** 2)
            if dist > s.detection.range_m:
                continue
            bearing = math.atan2(oy - py, ox - px) - robot.heading
            bearing = math.atan2(math.sin(bearing), math.cos(bearing))
            if abs(bearing) > half_fov:
                continue
            key = (robot.robot_id, idx)
            last = self._cooldown.get(key)
            if last is not None and now - last < s.detection.cooldown_ms:
                continue
            self._cooldown[key] = now
            noise = self._rng_detect[robot.robot_id].normal(0.0, s.detection.noise_sigma, 3)
            est = tuple(float(c) for c in np.asarray(obj.position) + noise)
            event = DetectionEvent(
                t=now,
                detector=robot.robot_id,
                category=obj.category,
                estimated_object_position=est,
                object_id=object_identifier(obj.category, obj.position),
            )
            out.append(event)
            self.detections.append(event)
            self.events.append((now, robot.robot_id, "detect", event.object_id))
        return out

    # -- scheduled chain traffic --------------------------------------------------

    def _crossed(self, key: str, hz: float, now: int) -> bool:
        due = math.floor(now * hz / 1000.0)
        prev = self._sched.get(key, 0)
        if due > prev:
            self._sched[key] = due
            return True
        return False

    def _submit_scheduled(self, now: int, detections: list) -> None:
        path_due = self._crossed("path", self.scenario.rates.path_hz, now)
        battery_due = self._crossed("battery", self.scenario.rates.battery_hz, now)
        for robot in self.robots:
            if path_due:
                n = robot.nav
                self.ledger.submit(
                    self.identities[robot.robot_id], self.channel,
                    f"{robot.robot_id}-path", "RecordPath",
                    [robot.robot_id, str(now), f"{n[0]:.6f}", f"{n[1]:.6f}", f"{n[2]:.6f}"],
                    now=now)
        if battery_due:
            uav = self._uav
            self.ledger.submit(
                self.identities[uav.robot_id], self.channel, "battery", "UpdateBattery",
                [uav.robot_id, f"{uav.battery:.6f}", str(now)], now=now)
        for event in detections:
            ex, ey, ez = event.estimated_object_position
            self.ledger.submit(
                self.identities[event.detector], self.channel,
                f"{event.detector}-objects", "RecordObject",
                [event.object_id, event.category, f"{ex:.6f}", f"{ey:.6f}", f"{ez:.6f}",
                 event.detector, str(event.t)], now=now)

    # -- chain-driven behaviour ------------------------------------------------------

    def _order_doc(self):
        entry = self.ledger.query_state(self.channel, "docking/order")
        if entry is None:
            return None
        if entry[0] is not self._order_raw:  # parse only when the bytes changed
            self._order_raw = entry[0]
            self._order_parsed = parse_json(entry[0])
        return self._order_parsed

    def _committed_pose(self, robot_id: str):
        """The robot's latest pose as committed on chain, or None."""
        view = self.ledger.channel(self.channel).committed_view()
        key = view.last_under(f"path/{robot_id}/")
        if key is None:
            return None
        doc = parse_json(view.get(key)[0])
        return np.array([doc["x"], doc["y"], doc["z"]])

    def _docking_controller(self, now: int) -> None:
        order = self._order_doc()
        status = order["status"] if order else "none"
        if status != self._last_order_status:
            self.events.append((now, "", "docking_status", status))
            self._on_status_commit(status, now)
            self._last_order_status = status
        s = self.scenario
        ugv, uav = self._ugv, self._uav
        if status == "ordered" and not self._accepted_sent:
            self.ledger.submit(self.identities[ugv.robot_id], self.channel,
                               "battery", "AdvanceDocking", ["accepted"], now=now)
            self._accepted_sent = True
        if status == "accepted" and not self._docking_sent:
            rx, ry, _ = self._rendezvous_point()
            uav_pose = self._committed_pose(uav.robot_id)
            ugv_near = math.hypot(ugv.nav[0] - rx, ugv.nav[1] - ry) <= s.docking.r_rdv
            uav_near = (uav_pose is not None
                        and math.hypot(uav_pose[0] - rx, uav_pose[1] - ry) <= s.docking.r_rdv)
            if ugv_near and uav_near:
                self.ledger.submit(self.identities[ugv.robot_id], self.channel,
                                   "battery", "AdvanceDocking", ["docking"], now=now)
                self._docking_sent = True
        # arrival bookkeeping
        for robot in (ugv, uav):
            if robot.mode == TO_RENDEZVOUS:
                rx, ry, _ = self._rendezvous_point()
                if math.hypot(robot.nav[0] - rx, robot.nav[1] - ry) <= s.docking.r_rdv:
                    robot.mode = AWAIT_DOCK
        if uav.mode == DOCKING and not self._docked_sent:
            deck = ugv.true_pose
            horiz = math.hypot(uav.nav[0] - deck[0], uav.nav[1] - deck[1])
            if horiz <= s.docking.d_dock and uav.nav[2] <= deck[2] + self._deck_h + 0.1:
                self._land(now)

    def _on_status_commit(self, status: str, now: int) -> None:
        if status == "ordered":
            for robot in self.robots:
                if robot.mode == INSPECT:
                    robot.mode = TO_RENDEZVOUS
        elif status == "docking":
            uav, ugv = self._uav, self._ugv
            self.anchors.set_mode(uav.robot_id, "relative")
            uav.loc_mode = "relative"
            self.events.append((now, uav.robot_id, "loc_mode", "relative"))
            if uav.mode != DOCKED:
                uav.mode = DOCKING
            ugv.mode = DOCKING
        elif status == "docked":
            self._ugv.mode = DOCKED

    def _land(self, now: int) -> None:
        uav, ugv = self._uav, self._ugv
        uav.true_pose = ugv.true_pose.copy()
        uav.true_pose[2] += self._deck_h
        uav.nav = uav.true_pose.copy()
        uav.mode = DOCKED
        self._dock_time = now
        self._dock_level = uav.battery
        self.events.append((now, uav.robot_id, "land", ""))
        self.ledger.submit(self.identities[uav.robot_id], self.channel,
                           "battery", "AdvanceDocking", ["docked"], now=now)
        self._docked_sent = True


def interleaved_submit(ledger: Ledger, per_agent_calls: dict, seed: int, now: int) -> list:
    """Stress helper: merge per-agent submission lists in a seeded random order.

    per_agent_calls maps an Identity to a list of (channel, chaincode,
    function, args). Returns tx ids in submission order.
    """
    rng = np.random.default_rng(seed)
    cursors = {ident: 0 for ident in per_agent_calls}
    tx_ids = []
    agents = list(per_agent_calls)
    while True:
        live = [a for a in agents if cursors[a] < len(per_agent_calls[a])]
        if not live:
            break
        agent = live[rng.integers(0, len(live))]
        channel, chaincode, function, args = per_agent_calls[agent][cursors[agent]]
        cursors[agent] += 1
        tx_ids.append(ledger.submit(agent, channel, chaincode, function, args, now))
    return tx_ids
