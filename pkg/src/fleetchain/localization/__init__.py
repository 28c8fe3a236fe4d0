"""UWB ranging simulation and multilateration position estimation.

Anchors come in two sets: fixed room anchors ("global") and anchors
riding on the ground vehicle ("robot_mounted", positions derived from
the carrier pose every tick). A tag localizes against whichever set its
mode enables; switching a tag to relative mode turns the mounted set on
and the global set off.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from ._kernels import (
    STATUS_CONVERGED,
    STATUS_DEGENERATE,
    USING_NUMBA,
    gauss_newton,
    warmup,
)

GLOBAL = "global"
ROBOT_MOUNTED = "robot_mounted"
MODES = ("global", "relative")

GRAD_TOL = 1e-9
STEP_TOL = 1e-10
MAX_ITER = 100
MAX_HALVINGS = 8


class LocalizationError(Exception):
    pass


class NoAnchors(LocalizationError):
    pass


class DegenerateGeometry(LocalizationError):
    pass


class UnknownRobot(LocalizationError):
    pass


class InvalidMode(LocalizationError):
    pass


@dataclass
class Anchor:
    anchor_id: str
    position: np.ndarray  # (3,) metres, world frame
    set: str = GLOBAL
    enabled: bool = True
    carrier: str | None = None  # robot the anchor rides on
    body_offset: np.ndarray | None = None  # carrier frame, fixed

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        if self.set == ROBOT_MOUNTED and self.carrier is None:
            raise ValueError(f"robot_mounted anchor {self.anchor_id} needs a carrier")
        if self.set == GLOBAL and self.carrier is not None:
            raise ValueError(f"global anchor {self.anchor_id} cannot have a carrier")


@dataclass
class RangeMeasurement:
    anchor_id: str
    measured_distance: float
    true_distance: float
    t: int = 0


@dataclass
class PositionEstimate:
    position: np.ndarray
    residual_rms: float
    iterations: int
    converged: bool


class AnchorTable:
    """All anchors plus the per-tag localization mode.

    Switching any tag to relative mode enables the mounted set and
    disables the global beacons, mirroring how the deployment powers
    them; tags restricted to global mode simply stop ranging once the
    room beacons are off.
    """

    def __init__(self, anchors, tags: dict):
        # tags: robot_id -> tuple of allowed modes, e.g. {"tello": ("global", "relative")}
        self.anchors = list(anchors)
        self._carrier_pose: dict = {}
        self._modes = {}
        self._allowed = {}
        for robot_id, allowed in tags.items():
            for mode in allowed:
                if mode not in MODES:
                    raise InvalidMode(f"unknown mode {mode!r}")
            self._allowed[robot_id] = tuple(allowed)
            self._modes[robot_id] = "global"

    def mode_of(self, robot_id: str) -> str:
        if robot_id not in self._modes:
            raise UnknownRobot(robot_id)
        return self._modes[robot_id]

    def set_mode(self, robot_id: str, mode: str) -> None:
        if robot_id not in self._modes:
            raise UnknownRobot(robot_id)
        if mode not in self._allowed[robot_id]:
            raise InvalidMode(f"{robot_id} cannot use mode {mode!r}")
        if self._modes[robot_id] == mode:
            return  # idempotent
        self._modes[robot_id] = mode
        mounted_on = mode == "relative"
        for anchor in self.anchors:
            anchor.enabled = (anchor.set == ROBOT_MOUNTED) == mounted_on

    def enabled_for(self, robot_id: str):
        wanted = ROBOT_MOUNTED if self.mode_of(robot_id) == "relative" else GLOBAL
        return [a for a in self.anchors if a.enabled and a.set == wanted]

    def update_carrier(self, carrier_id: str, position, heading: float) -> None:
        """Recompute mounted anchor positions from the carrier pose."""
        px, py, pz = float(position[0]), float(position[1]), float(position[2])
        if self._carrier_pose.get(carrier_id) == (px, py, pz, heading):
            return
        self._carrier_pose[carrier_id] = (px, py, pz, heading)
        c, s = math.cos(heading), math.sin(heading)
        for anchor in self.anchors:
            if anchor.set == ROBOT_MOUNTED and anchor.carrier == carrier_id:
                ox, oy, oz = anchor.body_offset
                anchor.position[0] = px + c * ox - s * oy
                anchor.position[1] = py + s * ox + c * oy
                anchor.position[2] = pz + oz


def measure_ranges(tag_position, anchors, noise_sigma: float, rng, t: int = 0):
    """Noisy distances from a tag to each anchor.

    One normal draw per anchor, in anchor-list order, from the supplied
    generator; negative samples clamp to zero so the stream position
    never depends on the values drawn.
    """
    anchors = list(anchors)
    if not anchors:
        raise NoAnchors("no enabled anchors to range against")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    tx, ty, tz = (float(tag_position[0]), float(tag_position[1]), float(tag_position[2]))
    noise = rng.normal(0.0, noise_sigma, len(anchors))
    out = []
    for anchor, eps in zip(anchors, noise.tolist()):
        p = anchor.position
        true = math.sqrt((tx - p[0]) ** 2 + (ty - p[1]) ** 2 + (tz - p[2]) ** 2)
        out.append(RangeMeasurement(
            anchor_id=anchor.anchor_id,
            measured_distance=max(0.0, true + eps),
            true_distance=true,
            t=t,
        ))
    return out


def multilaterate(measurements, anchors, initial_guess=None, fixed_z: float | None = None):
    """Estimate a tag position from range measurements by Gauss-Newton.

    `anchors` may be a list or an {anchor_id: Anchor} map; every
    measurement must reference a known anchor. With fixed_z the vertical
    coordinate is constrained and only (x, y) are solved. Raises
    DegenerateGeometry when the anchor geometry cannot support a solve;
    running out of iterations returns the estimate with converged=False.
    """
    if not isinstance(anchors, dict):
        anchors = {a.anchor_id: a for a in anchors}
    if not measurements:
        raise NoAnchors("no measurements")
    a = np.empty((len(measurements), 3), dtype=np.float64)
    d = np.empty(len(measurements), dtype=np.float64)
    for i, m in enumerate(measurements):
        anchor = anchors.get(m.anchor_id)
        if anchor is None:
            raise LocalizationError(f"measurement references unknown anchor {m.anchor_id!r}")
        a[i] = anchor.position
        d[i] = m.measured_distance
    needed = 3 if fixed_z is not None else 4
    if len(measurements) < needed:
        raise DegenerateGeometry(
            f"{len(measurements)} anchors cannot fix {'2' if fixed_z is not None else '3'}D position")
    if initial_guess is None:
        x0 = a.mean(axis=0)
        if fixed_z is not None:
            x0[2] = fixed_z
    else:
        x0 = np.asarray(initial_guess, dtype=np.float64).copy()
        if fixed_z is not None:
            x0[2] = fixed_z
    p, rms, iterations, status = gauss_newton(
        a, d, x0, fixed_z is not None, MAX_ITER, GRAD_TOL, STEP_TOL, MAX_HALVINGS)
    if status == STATUS_DEGENERATE:
        raise DegenerateGeometry("rank-deficient geometry during solve")
    return PositionEstimate(
        position=p,
        residual_rms=float(rms),
        iterations=int(iterations),
        converged=status == STATUS_CONVERGED,
    )


def write_estimates_csv(path, rows) -> None:
    """Rows of (t_ms, robot_id, x, y, z, residual_rms, mode)."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_ms", "robot_id", "x", "y", "z", "residual_rms", "mode"])
        for t_ms, robot_id, x, y, z, rms, mode in rows:
            writer.writerow([t_ms, robot_id, f"{x:.6f}", f"{y:.6f}", f"{z:.6f}",
                             f"{rms:.6f}", mode])


def room_corner_anchors(width: float, depth: float, inset: float = 0.1,
                        z_low: float = 0.3, z_high: float = 2.5):
    """Four fixed anchors at the room corners, alternating low/high."""
    corners = [
        (inset, inset, z_low),
        (width - inset, inset, z_high),
        (width - inset, depth - inset, z_low),
        (inset, depth - inset, z_high),
    ]
    return [Anchor(anchor_id=f"g{i}", position=np.array(c), set=GLOBAL)
            for i, c in enumerate(corners)]


def deck_ring_anchors(carrier: str, deck_height: float, radius: float = 0.4):
    """Five anchors on the carrier deck: a centre node and a square ring."""
    offsets = [
        (0.0, 0.0, deck_height),
        (radius, 0.0, deck_height),
        (-radius, 0.0, deck_height),
        (0.0, radius, deck_height),
        (0.0, -radius, deck_height),
    ]
    return [Anchor(anchor_id=f"m{i}", position=np.array(o), set=ROBOT_MOUNTED,
                   carrier=carrier, body_offset=np.array(o))
            for i, o in enumerate(offsets)]
