"""Deterministic synthetic scenario generator.

A scenario bundles a ground-truth trajectory through a simple boxy world,
ray-cast scans from a spinning 360 x 59 degree, 40 m range sensor model,
and two drifting odometry streams (lio in the world frame, vio in its own
offset frame).  Degradation windows in the schedule do two things:

  * the named subsystem's odometry error model switches mode inside the
    window (axis drift, boosted random walk, or dropout), and
  * for lio windows on corridor scenarios, the feature boxes that normally
    line the walls are omitted from the stretch of corridor traversed
    during the window, so scans captured there genuinely look degenerate
    (smooth walls only) and a scan-driven detector fires without peeking
    at the schedule.

Every output is a pure function of (scenario config, seed): directions,
noise, box layout and odometry walks all come from counter-based
splitmix64 streams, so regenerating a scenario is byte-identical.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError
from .formats import (
    scan_filename,
    transform_to_json,
    write_covariances,
    write_json,
    write_scan_xyz,
    write_tum,
)
from .rng import PortableRng, derive_seed
from .scan_match import ScanFrame
from .se3 import Transform, Twist, compose, exp_se3, exp_so3, inverse

SENSOR_RANGE = 40.0  # m
SENSOR_FOV_V = math.radians(59.0)
MIN_RANGE = 0.05

_TAG_SCAN = 1
_TAG_ODOM_LIO = 2
_TAG_ODOM_VIO = 3
_TAG_OFFSET = 4
_TAG_BOXES = 5

COV_FLOOR_TRANS = 0.005**2  # m^2
COV_FLOOR_ROT = 0.002**2  # rad^2


@dataclass(frozen=True)
class DegradationWindow:
    subsystem: str  # "lio" or "vio"
    t_start: float
    t_end: float
    mode: str  # "axis_drift" | "random_walk_boost" | "dropout"
    magnitude: float

    def __post_init__(self):
        if self.subsystem not in ("lio", "vio"):
            raise ValueError(f"unknown subsystem {self.subsystem!r}")
        if self.mode not in ("axis_drift", "random_walk_boost", "dropout"):
            raise ValueError(f"unknown degradation mode {self.mode!r}")
        if not self.t_start < self.t_end:
            raise ValueError("window needs t_start < t_end")


@dataclass(frozen=True)
class Scenario:
    name: str
    duration: float = 300.0
    pose_rate: float = 10.0
    scan_rate: float = 5.0
    kind: str = "corridor_loop"  # corridor_loop | elevator | figure_eight
    corridor_length: float = 40.0
    corridor_width: float = 3.0
    corridor_height: float = 3.0
    ring_breadth: float = 17.0  # short outer side of the corridor ring
    corner_radius: float = 1.0
    elevator_rise: float = 6.0
    scan_sigma: float = 0.01  # m, isotropic per point
    odom_sigma: float = 0.002  # m/sqrt(s) random walk per translation axis
    odom_sigma_rot: float = 0.0002  # rad/sqrt(s) per rotation axis
    rays_per_scan: int = 576
    sensor_height: float = 0.8
    box_spacing: float = 1.6  # m between feature boxes along the walls
    box_margin: float = 0.7  # extra box-free margin around degraded stretches
    # Fraction of returns kept while the LiDAR is inside a lio degradation
    # window (the artificial-injection analog: degraded scans are sparse).
    scan_degraded_keep: float = 0.30
    schedule: tuple = ()
    seed: int = 7

    def __post_init__(self):
        object.__setattr__(self, "schedule", tuple(self.schedule))
        if self.duration <= 0 or self.pose_rate <= 0 or self.scan_rate <= 0:
            raise ValueError("duration and rates must be positive")
        if min(self.corridor_length, self.corridor_width, self.corridor_height) <= 0:
            raise ValueError("geometry dimensions must be positive")
        if self.kind not in ("corridor_loop", "elevator", "figure_eight"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        per_sub: dict[str, list[DegradationWindow]] = {}
        for w in self.schedule:
            if w.t_start < 0 or w.t_end > self.duration:
                raise ValueError("window outside scenario duration")
            per_sub.setdefault(w.subsystem, []).append(w)
        for windows in per_sub.values():
            windows = sorted(windows, key=lambda w: w.t_start)
            for a, b in zip(windows, windows[1:]):
                if b.t_start < a.t_end:
                    raise ValueError("windows overlap within one subsystem")


# ---------------------------------------------------------------------------
# trajectories


def _smoothstep(u):
    return 3.0 * u * u - 2.0 * u * u * u


def _yaw(theta: float) -> np.ndarray:
    return exp_so3([0.0, 0.0, theta])


class _RingPath:
    """Rectangular ring centerline with quarter-circle corner blending."""

    def __init__(self, scenario: Scenario):
        w = scenario.corridor_width
        r = scenario.corner_radius
        lc = scenario.corridor_length - w  # centerline rectangle dims
        bc = scenario.ring_breadth - w
        if lc <= 2 * r or bc <= 2 * r:
            raise ValueError("ring too small for the corner radius")
        self.w = w
        self.r = r
        self.long = lc - 2 * r
        self.short = bc - 2 * r
        self.arc = 0.5 * math.pi * r
        self.length = 2 * self.long + 2 * self.short + 4 * self.arc
        self.x0, self.y0 = w / 2, w / 2  # inner corner of the centerline rect
        self.lc, self.bc = lc, bc
        self.z = scenario.sensor_height
        # segment starts: long, arc, short, arc, long, arc, short, arc
        self.breaks = np.cumsum(
            [0, self.long, self.arc, self.short, self.arc, self.long, self.arc, self.short, self.arc]
        )

    def pose(self, s: float) -> Transform:
        s = s % self.length
        r, x0, y0 = self.r, self.x0, self.y0
        lc, bc = self.lc, self.bc
        seg = int(np.searchsorted(self.breaks, s, side="right")) - 1
        seg = min(seg, 7)
        u = s - self.breaks[seg]
        if seg == 0:  # bottom straight, +x
            p = (x0 + r + u, y0, 0.0)
            yaw = 0.0
        elif seg == 1:  # corner at (x0+lc-r, y0+r)
            a = u / r
            cx, cy = x0 + lc - r, y0 + r
            p = (cx + r * math.sin(a), cy - r * math.cos(a), 0.0)
            yaw = a
        elif seg == 2:  # right straight, +y
            p = (x0 + lc, y0 + r + u, 0.0)
            yaw = 0.5 * math.pi
        elif seg == 3:
            a = u / r
            cx, cy = x0 + lc - r, y0 + bc - r
            p = (cx + r * math.cos(a), cy + r * math.sin(a), 0.0)
            yaw = 0.5 * math.pi + a
        elif seg == 4:  # top straight, -x
            p = (x0 + lc - r - u, y0 + bc, 0.0)
            yaw = math.pi
        elif seg == 5:
            a = u / r
            cx, cy = x0 + r, y0 + bc - r
            p = (cx - r * math.sin(a), cy + r * math.cos(a), 0.0)
            yaw = math.pi + a
        elif seg == 6:  # left straight, -y
            p = (x0, y0 + bc - r - u, 0.0)
            yaw = 1.5 * math.pi
        else:
            a = u / r
            cx, cy = x0 + r, y0 + r
            p = (cx - r * math.cos(a), cy - r * math.sin(a), 0.0)
            yaw = 1.5 * math.pi + a
        pos = np.array([p[0], p[1], self.z])
        return Transform(_yaw(yaw), pos)

    def arc_at_time(self, t: float, duration: float) -> float:
        return self.length * (t / duration)

    def on_straight(self, s: float, margin: float = 0.0) -> bool:
        s = s % self.length
        for seg in (0, 2, 4, 6):
            lo, hi = self.breaks[seg], self.breaks[seg + 1]
            if lo + margin <= s <= hi - margin:
                return True
        return False


class _ElevatorPath:
    """Out-and-back corridor run with a vertical rise at the far end."""

    # time fractions: approach, pause, rise, descend, pause, return
    FRACS = (0.30, 0.05, 0.15, 0.15, 0.05, 0.30)

    def __init__(self, scenario: Scenario):
        self.length = scenario.corridor_length
        self.w = scenario.corridor_width
        self.rise = scenario.elevator_rise
        self.z = scenario.sensor_height
        self.x_start = 1.5
        self.x_end = self.length - self.w / 2  # shaft center
        self.y = self.w / 2

    def pose_at_fraction(self, f: float) -> Transform:
        b = np.cumsum((0.0,) + self.FRACS)
        x, z = self.x_start, self.z
        if f <= b[1]:
            u = (f - b[0]) / self.FRACS[0]
            x = self.x_start + (self.x_end - self.x_start) * _smoothstep(u)
        elif f <= b[2]:
            x = self.x_end
        elif f <= b[3]:
            u = (f - b[2]) / self.FRACS[2]
            x = self.x_end
            z = self.z + self.rise * _smoothstep(u)
        elif f <= b[4]:
            u = (f - b[3]) / self.FRACS[3]
            x = self.x_end
            z = self.z + self.rise * (1.0 - _smoothstep(u))
        elif f <= b[5]:
            x = self.x_end
        else:
            u = (f - b[5]) / self.FRACS[5]
            x = self.x_end + (self.x_start - self.x_end) * _smoothstep(u)
        return Transform(_yaw(0.0), np.array([x, self.y, z]))


class _FigureEightPath:
    """Gerono lemniscate inside a rectangular room."""

    def __init__(self, scenario: Scenario):
        self.a = 10.0
        self.b = 7.0
        self.z = scenario.sensor_height
        self.cx = scenario.corridor_length / 2  # room is corridor_length wide
        self.cy = 0.0

    def pose_at_fraction(self, f: float) -> Transform:
        u = 2.0 * math.pi * f
        x = self.cx + self.a * math.sin(u)
        y = self.cy + 0.5 * self.b * math.sin(2.0 * u)
        dx = self.a * math.cos(u)
        dy = self.b * math.cos(2.0 * u)
        return Transform(_yaw(math.atan2(dy, dx)), np.array([x, y, self.z]))


def _path_pose(scenario: Scenario, t: float, ring: _RingPath | None = None) -> Transform:
    if scenario.kind == "corridor_loop":
        ring = ring or _RingPath(scenario)
        return ring.pose(ring.arc_at_time(t, scenario.duration))
    if scenario.kind == "elevator":
        return _ElevatorPath(scenario).pose_at_fraction(t / scenario.duration)
    return _FigureEightPath(scenario).pose_at_fraction(t / scenario.duration)


def gen_trajectory(scenario: Scenario) -> list[tuple[float, Transform]]:
    """Ground-truth poses at the pose rate, endpoint included so closed
    loops visibly return to their start."""
    n = int(math.floor(scenario.duration * scenario.pose_rate))
    ring = _RingPath(scenario) if scenario.kind == "corridor_loop" else None
    times = [k / scenario.pose_rate for k in range(n + 1)]
    return [(t, _path_pose(scenario, t, ring)) for t in times]


def path_length(scenario: Scenario) -> float:
    """Analytic centerline length (corridor_loop only)."""
    if scenario.kind != "corridor_loop":
        raise ValueError("analytic length available for corridor_loop only")
    return _RingPath(scenario).length


# ---------------------------------------------------------------------------
# world geometry and ray casting


@dataclass
class _FaceSet:
    coord: np.ndarray  # (F,)
    lo0: np.ndarray  # (F,) bounds on the first other axis
    hi0: np.ndarray
    lo1: np.ndarray  # (F,) bounds on the second other axis
    hi1: np.ndarray


_OTHER = {0: (1, 2), 1: (0, 2), 2: (0, 1)}


class World:
    """Axis-aligned rectangular faces plus box obstacles."""

    def __init__(self, faces, boxes, bounds, inner_block=None):
        # faces: list of (axis, coord, (lo0, hi0), (lo1, hi1))
        # boxes: list of (center(3,), half(3,)); bounds: (lo(3,), hi(3,))
        for center, half in boxes:
            faces = faces + _box_faces(center, half)
        grouped = {0: [], 1: [], 2: []}
        for axis, coord, b0, b1 in faces:
            grouped[axis].append((coord, b0[0], b0[1], b1[0], b1[1]))
        self.sets = {}
        for axis, rows in grouped.items():
            if not rows:
                continue
            arr = np.array(rows)
            self.sets[axis] = _FaceSet(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4])
        self.boxes = boxes
        self.bounds = bounds
        self.inner_block = inner_block  # ((xlo, xhi), (ylo, yhi)) exclusion

    def contains(self, p, clearance: float = 0.2) -> bool:
        lo, hi = self.bounds
        if not ((p >= lo + clearance).all() and (p <= hi - clearance).all()):
            return False
        if self.inner_block is not None:
            (xlo, xhi), (ylo, yhi) = self.inner_block
            if xlo - clearance < p[0] < xhi + clearance and ylo - clearance < p[1] < yhi + clearance:
                return False
        for center, half in self.boxes:
            if (np.abs(p - center) < half + clearance).all():
                return False
        return True

    def cast(self, origin: np.ndarray, dirs: np.ndarray, max_range: float) -> np.ndarray:
        """First-hit points for unit direction rays; misses are dropped."""
        best = np.full(len(dirs), np.inf)
        for axis, fs in self.sets.items():
            d = dirs[:, axis]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (fs.coord[:, None] - origin[axis]) / d[None, :]
            a0, a1 = _OTHER[axis]
            p0 = origin[a0] + t * dirs[:, a0][None, :]
            p1 = origin[a1] + t * dirs[:, a1][None, :]
            ok = (
                (t > MIN_RANGE)
                & (t <= max_range)
                & (p0 >= fs.lo0[:, None])
                & (p0 <= fs.hi0[:, None])
                & (p1 >= fs.lo1[:, None])
                & (p1 <= fs.hi1[:, None])
            )
            t = np.where(ok, t, np.inf)
            best = np.minimum(best, t.min(axis=0))
        hits = np.isfinite(best)
        return origin + dirs[hits] * best[hits, None]


def _box_faces(center, half):
    faces = []
    for axis in range(3):
        a0, a1 = _OTHER[axis]
        b0 = (center[a0] - half[a0], center[a0] + half[a0])
        b1 = (center[a1] - half[a1], center[a1] + half[a1])
        for sign in (-1.0, 1.0):
            faces.append((axis, center[axis] + sign * half[axis], b0, b1))
    return faces


def _degraded_arc_zones(scenario: Scenario, ring: _RingPath) -> list[tuple[float, float]]:
    """Arc-length stretches traversed during lio degradation windows."""
    v = ring.length / scenario.duration
    zones = []
    for w in scenario.schedule:
        if w.subsystem != "lio":
            continue
        zones.append((v * w.t_start - scenario.box_margin, v * w.t_end + scenario.box_margin))
    return zones


def _in_zones(s: float, zones, length: float) -> bool:
    s = s % length
    for lo, hi in zones:
        if lo % length <= hi % length:
            if lo % length <= s <= hi % length:
                return True
        elif s >= lo % length or s <= hi % length:
            return True
    return False


def _corridor_world(scenario: Scenario) -> World:
    L = scenario.corridor_length
    B = scenario.ring_breadth
    H = scenario.corridor_height
    w = scenario.corridor_width
    faces = [
        (0, 0.0, (0.0, B), (0.0, H)),  # outer x walls: bounds (y, z)
        (0, L, (0.0, B), (0.0, H)),
        (1, 0.0, (0.0, L), (0.0, H)),  # outer y walls: bounds (x, z)
        (1, B, (0.0, L), (0.0, H)),
        (0, w, (w, B - w), (0.0, H)),  # inner block walls
        (0, L - w, (w, B - w), (0.0, H)),
        (1, w, (w, L - w), (0.0, H)),
        (1, B - w, (w, L - w), (0.0, H)),
        (2, 0.0, (0.0, L), (0.0, B)),  # floor, ceiling: bounds (x, y)
        (2, H, (0.0, L), (0.0, B)),
    ]
    ring = _RingPath(scenario)
    zones = _degraded_arc_zones(scenario, ring)
    rng = PortableRng(derive_seed(scenario.seed, _TAG_BOXES))
    boxes = []
    n_slots = int(ring.length / scenario.box_spacing)
    for i in range(n_slots):
        jitter = (rng.uniform(1)[0] - 0.5) * 0.6
        size = 0.4 + 0.5 * rng.uniform(3)
        side_pick = rng.uniform(1)[0]
        s = (i + 0.5) * scenario.box_spacing + jitter
        if _in_zones(s, zones, ring.length):
            continue
        pose = ring.pose(s)
        heading = pose.rotation[:, 0]
        left = np.array([-heading[1], heading[0], 0.0])
        side = 1.0 if side_pick < 0.5 else -1.0
        if not ring.on_straight(s, margin=0.3):
            side = -1.0  # corners: outer wall only
        lateral = w / 2 - size[1] / 2 - 0.05
        center = pose.translation + side * lateral * left
        center[2] = size[2] / 2
        boxes.append((center, size / 2))
    bounds = (np.zeros(3), np.array([L, B, H]))
    return World(faces, boxes, bounds, inner_block=((w, L - w), (w, B - w)))


def _elevator_world(scenario: Scenario) -> World:
    L = scenario.corridor_length
    w = scenario.corridor_width
    H = scenario.corridor_height
    top = H + scenario.elevator_rise + 1.0
    shaft_lo = L - w  # last corridor_width meters rise as the shaft
    faces = [
        (2, 0.0, (0.0, L), (0.0, w)),  # floor
        (0, 0.0, (0.0, w), (0.0, H)),  # near end wall
        (0, L, (0.0, w), (0.0, top)),  # far (shaft) end wall
        (1, 0.0, (0.0, shaft_lo), (0.0, H)),  # corridor side walls
        (1, w, (0.0, shaft_lo), (0.0, H)),
        (1, 0.0, (shaft_lo, L), (0.0, top)),  # shaft side walls
        (1, w, (shaft_lo, L), (0.0, top)),
        (2, H, (0.0, shaft_lo), (0.0, w)),  # corridor ceiling
        (2, top, (shaft_lo, L), (0.0, w)),  # shaft ceiling
        (0, shaft_lo, (0.0, w), (H, top)),  # lip above the corridor ceiling
    ]
    rng = PortableRng(derive_seed(scenario.seed, _TAG_BOXES))
    boxes = []
    n_slots = int((shaft_lo - 4.0) / scenario.box_spacing)
    for i in range(max(n_slots, 0)):
        size = 0.3 + 0.4 * rng.uniform(3)
        side = 1.0 if rng.uniform(1)[0] < 0.5 else -1.0
        x = 2.0 + (i + 0.5) * scenario.box_spacing
        y = w / 2 + side * (w / 2 - size[1] / 2 - 0.05)
        boxes.append((np.array([x, y, size[2] / 2]), size / 2))
    bounds = (np.zeros(3), np.array([L, w, top]))
    return World(faces, boxes, bounds)


def _figure_eight_world(scenario: Scenario) -> World:
    L = scenario.corridor_length  # room length
    B = 12.0
    H = 4.0
    faces = [
        (0, 0.0, (-B / 2, B / 2), (0.0, H)),
        (0, L, (-B / 2, B / 2), (0.0, H)),
        (1, -B / 2, (0.0, L), (0.0, H)),
        (1, B / 2, (0.0, L), (0.0, H)),
        (2, 0.0, (0.0, L), (-B / 2, B / 2)),
        (2, H, (0.0, L), (-B / 2, B / 2)),
    ]
    rng = PortableRng(derive_seed(scenario.seed, _TAG_BOXES))
    boxes = []
    perimeter = 2 * (L + B)
    n_slots = int(perimeter / scenario.box_spacing)
    for i in range(n_slots):
        size = 0.3 + 0.4 * rng.uniform(3)
        s = (i + 0.5) * scenario.box_spacing
        if s < L:
            center = np.array([s, -B / 2 + size[1] / 2 + 0.05, size[2] / 2])
        elif s < L + B:
            center = np.array([L - size[0] / 2 - 0.05, s - L - B / 2, size[2] / 2])
        elif s < 2 * L + B:
            center = np.array([s - L - B, B / 2 - size[1] / 2 - 0.05, size[2] / 2])
        else:
            center = np.array([size[0] / 2 + 0.05, s - 2 * L - B - B / 2, size[2] / 2])
        boxes.append((center, size / 2))
    bounds = (np.array([0.0, -B / 2, 0.0]), np.array([L, B / 2, H]))
    return World(faces, boxes, bounds)


def build_world(scenario: Scenario) -> World:
    if scenario.kind == "corridor_loop":
        return _corridor_world(scenario)
    if scenario.kind == "elevator":
        return _elevator_world(scenario)
    return _figure_eight_world(scenario)


def scan_keep_fraction(scenario: Scenario, t: float) -> float:
    """Fraction of returns surviving at time t (drops inside lio windows)."""
    for w in scenario.schedule:
        if w.subsystem == "lio" and w.t_start <= t < w.t_end:
            return scenario.scan_degraded_keep
    return 1.0


def synth_scan(
    pose: Transform, world: World, scenario: Scenario, index: int, timestamp: float = 0.0
) -> ScanFrame:
    """One ray-cast scan in the sensor frame, deterministic per (seed, index).

    Inside a lio degradation window the scan is additionally sparsified to
    scan_degraded_keep of its returns, mirroring the artificial noise
    injection the switching experiment is built around.
    """
    if not world.contains(pose.translation):
        raise DataError(f"scan pose at {pose.translation} is outside free space")
    rng = PortableRng(derive_seed(scenario.seed, _TAG_SCAN, index))
    n = scenario.rays_per_scan
    az = 2.0 * math.pi * rng.uniform(n)
    el = (rng.uniform(n) - 0.5) * SENSOR_FOV_V
    ce = np.cos(el)
    dirs_body = np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=1)
    dirs_world = dirs_body @ pose.rotation.T
    hits_world = world.cast(pose.translation, dirs_world, SENSOR_RANGE)
    pts = (hits_world - pose.translation) @ pose.rotation
    keep = scan_keep_fraction(scenario, timestamp)
    if keep < 1.0:
        pts = pts[rng.uniform(len(pts)) < keep]
    if scenario.scan_sigma > 0.0:
        pts = pts + scenario.scan_sigma * rng.normal3(len(pts))
    return ScanFrame(timestamp, pts)


def scan_times(scenario: Scenario) -> list[float]:
    n = int(math.floor(scenario.duration * scenario.scan_rate))
    return [k / scenario.scan_rate for k in range(n)]


def gen_scans(scenario: Scenario):
    """Yield (index, timestamp, ScanFrame) over the whole scenario."""
    world = build_world(scenario)
    ring = _RingPath(scenario) if scenario.kind == "corridor_loop" else None
    for i, t in enumerate(scan_times(scenario)):
        pose = _path_pose(scenario, t, ring)
        yield i, t, synth_scan(pose, world, scenario, i, timestamp=t)


# ---------------------------------------------------------------------------
# odometry


def world_frame_offset(scenario: Scenario) -> Transform:
    """True vio-to-lio frame offset the aligner is expected to recover."""
    rng = PortableRng(derive_seed(scenario.seed, _TAG_OFFSET))
    u = rng.uniform(4)
    translation = np.array([4.0 * (u[0] - 0.5), 4.0 * (u[1] - 0.5), 1.0 * (u[2] - 0.5)])
    yaw = 1.0 * (u[3] - 0.5)
    return Transform(_yaw(yaw), translation)


def _windows_for(scenario: Scenario, subsystem: str):
    return [w for w in scenario.schedule if w.subsystem == subsystem]


def _axis_drift_at(t: float, windows) -> float:
    total = 0.0
    for w in windows:
        if w.mode == "axis_drift":
            total += w.magnitude * min(max(t - w.t_start, 0.0), w.t_end - w.t_start)
    return total


def synth_odometry(gt, subsystem: str, scenario: Scenario):
    """Noisy pose stream for one subsystem: (t, Transform, covariance) rows.

    The stream is the ground truth (vio: re-expressed in its own world
    frame) right-composed with an accumulated random-walk error.  Inside a
    degradation window for this subsystem the error model switches mode:
    axis_drift adds magnitude * elapsed meters along the world x axis (the
    drift persists after the window, as integrated odometry would),
    random_walk_boost multiplies the walk sigma, dropout emits nothing.
    """
    if subsystem not in ("lio", "vio"):
        raise ValueError("subsystem must be 'lio' or 'vio'")
    tag = _TAG_ODOM_LIO if subsystem == "lio" else _TAG_ODOM_VIO
    rng = PortableRng(derive_seed(scenario.seed, tag))
    windows = _windows_for(scenario, subsystem)
    offset_inv = (
        inverse(world_frame_offset(scenario)) if subsystem == "vio" else Transform.identity()
    )
    drift_axis = np.array([1.0, 0.0, 0.0])

    err = Transform.identity()
    var_t, var_r = 0.0, 0.0
    out = []
    prev_t = None
    for t, pose in gt:
        dt = 0.0 if prev_t is None else t - prev_t
        prev_t = t
        boost = 1.0
        dropped = False
        for w in windows:
            if w.t_start <= t < w.t_end:
                if w.mode == "random_walk_boost":
                    boost = w.magnitude
                elif w.mode == "dropout":
                    dropped = True
        draw_t = rng.normal3(1)[0]
        draw_r = rng.normal3(1)[0]
        if dt > 0.0:
            s_t = scenario.odom_sigma * boost
            s_r = scenario.odom_sigma_rot * boost
            step = Twist(s_t * math.sqrt(dt) * draw_t, s_r * math.sqrt(dt) * draw_r)
            err = compose(err, exp_se3(step))
            var_t += s_t * s_t * dt
            var_r += s_r * s_r * dt
        if dropped:
            continue
        base = compose(offset_inv, pose)
        noisy = compose(base, err)
        drift = _axis_drift_at(t, windows) * drift_axis
        cov = np.diag([var_t + COV_FLOOR_TRANS] * 3 + [var_r + COV_FLOOR_ROT] * 3)
        out.append((t, Transform(noisy.rotation, noisy.translation + drift), cov))
    return out


# ---------------------------------------------------------------------------
# scenario registry and serialization


def scenario_to_dict(scenario: Scenario) -> dict:
    d = {
        "name": scenario.name,
        "duration": scenario.duration,
        "pose_rate": scenario.pose_rate,
        "scan_rate": scenario.scan_rate,
        "kind": scenario.kind,
        "corridor_length": scenario.corridor_length,
        "corridor_width": scenario.corridor_width,
        "corridor_height": scenario.corridor_height,
        "ring_breadth": scenario.ring_breadth,
        "corner_radius": scenario.corner_radius,
        "elevator_rise": scenario.elevator_rise,
        "scan_sigma": scenario.scan_sigma,
        "odom_sigma": scenario.odom_sigma,
        "odom_sigma_rot": scenario.odom_sigma_rot,
        "rays_per_scan": scenario.rays_per_scan,
        "sensor_height": scenario.sensor_height,
        "box_spacing": scenario.box_spacing,
        "box_margin": scenario.box_margin,
        "seed": scenario.seed,
        "schedule": [window_to_dict(w) for w in scenario.schedule],
    }
    return d


def window_to_dict(w: DegradationWindow) -> dict:
    return {
        "subsystem": w.subsystem,
        "t_start": w.t_start,
        "t_end": w.t_end,
        "mode": w.mode,
        "magnitude": w.magnitude,
    }


def window_from_dict(d: dict) -> DegradationWindow:
    return DegradationWindow(d["subsystem"], d["t_start"], d["t_end"], d["mode"], d["magnitude"])


def scenario_from_dict(d: dict) -> Scenario:
    d = dict(d)
    d["schedule"] = tuple(window_from_dict(w) for w in d.get("schedule", []))
    known = set(Scenario.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise DataError(f"unknown scenario keys: {sorted(unknown)}")
    return Scenario(**d)


def corridor01(seed: int = 7) -> Scenario:
    windows = (
        DegradationWindow("lio", 50.0, 80.0, "axis_drift", 0.15),
        DegradationWindow("lio", 200.0, 250.0, "axis_drift", 0.15),
    )
    return Scenario(name="corridor01-synth", schedule=windows, seed=seed)


def corridor01_clean(seed: int = 7) -> Scenario:
    return replace(corridor01(seed), name="corridor01-synth-clean", schedule=())


def elevator01(seed: int = 7) -> Scenario:
    return Scenario(
        name="elevator01-synth",
        kind="elevator",
        duration=120.0,
        corridor_length=20.0,
        seed=seed,
    )


def figure8(seed: int = 7) -> Scenario:
    return Scenario(
        name="figure8-synth",
        kind="figure_eight",
        duration=120.0,
        corridor_length=30.0,
        seed=seed,
    )


SCENARIOS = {
    "corridor01-synth": corridor01,
    "corridor01-synth-clean": corridor01_clean,
    "elevator01-synth": elevator01,
    "figure8-synth": figure8,
}


def make_scenario(name: str, seed: int = 7) -> Scenario:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; valid names: {', '.join(sorted(SCENARIOS))}")
    return SCENARIOS[name](seed)


def write_scenario(scenario: Scenario, out_dir) -> None:
    """Generate and write the full scenario directory.

    Contents: gt.tum, lio.tum, vio.tum (+ .cov.csv sidecars), scans/*.xyz,
    schedule.json, scenario.json.
    """
    os.makedirs(out_dir, exist_ok=True)
    scans_dir = os.path.join(out_dir, "scans")
    os.makedirs(scans_dir, exist_ok=True)

    gt = gen_trajectory(scenario)
    write_tum(os.path.join(out_dir, "gt.tum"), gt, header=f"{scenario.name} ground truth")
    for subsystem in ("lio", "vio"):
        stream = synth_odometry(gt, subsystem, scenario)
        write_tum(
            os.path.join(out_dir, f"{subsystem}.tum"),
            [(t, pose) for t, pose, _ in stream],
            header=f"{scenario.name} {subsystem} odometry",
        )
        write_covariances(
            os.path.join(out_dir, f"{subsystem}.cov.csv"), [(t, cov) for t, _, cov in stream]
        )
    for i, t, scan in gen_scans(scenario):
        write_scan_xyz(
            os.path.join(scans_dir, scan_filename(i)), scan.points, comment=f"t={t:.6f}"
        )
    write_json(
        os.path.join(out_dir, "schedule.json"), [window_to_dict(w) for w in scenario.schedule]
    )
    info = scenario_to_dict(scenario)
    info["derived"] = {
        "t_gt_align": transform_to_json(world_frame_offset(scenario)),
        "scan_count": len(scan_times(scenario)),
    }
    if scenario.kind == "corridor_loop":
        info["derived"]["path_length"] = path_length(scenario)
    write_json(os.path.join(out_dir, "scenario.json"), info)


def read_scenario_dir(path) -> Scenario:
    from .formats import read_json

    meta = read_json(os.path.join(path, "scenario.json"))
    meta.pop("derived", None)
    return scenario_from_dict(meta)
