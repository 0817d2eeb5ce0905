"""LiDAR-priority fusion supervisor.

The lio stream is the primary pose source.  When debounced degradation is
asserted and the vio subsystem is initialized and fresh, the supervisor
solves the vio-to-output frame alignment over a trailing window of pose
pairs and hands off to vio through a smoothed transition; on debounced
recovery it re-aligns lio into the output frame and hands back.

Frame bookkeeping: the emitted stream defines its own "output" frame,
which starts identical to the lio world frame.  Every hand-off aligns the
incoming source against the recent *output* poses, so a source that
accumulated drift while inactive (the whole point of switching away from
it) is re-adopted without inheriting that drift as a jump.  On the first
switch the output frame still equals the lio frame, so the solved map is
exactly the vio-to-lio transform.

Transitions emit on vio pose events (the streams share a clock at desk
scale, and vio events are processed after lio events at equal timestamps,
so both endpoints of the blend are current).  The supervisor is a
single-writer deterministic event loop; feed it one merged, time-ordered
event stream.
"""

from __future__ import annotations

import logging
import math
import os
from collections import deque
from dataclasses import dataclass

import numpy as np

from .degeneracy import (
    DegeneracyDetector,
    DetectorConfig,
    HealthSample,
    flagged_intervals,
    write_health_csv,
)
from .errors import DataError, StreamOrderError
from .formats import (
    read_covariances,
    read_json,
    read_scan_xyz,
    read_tum_with_quats,
    scan_filename,
    write_json,
    write_tum,
)
from .frame_align import (
    AlignmentResult,
    AlignmentWindow,
    RobustKernel,
    SolverOptions,
    alignment_to_json,
    pair_poses,
    solve_alignment,
)
from .scan_match import IcpParams, ScanFrame, icp_align
from .se3 import Transform, Twist, compose, exp_se3, geodesic_interp, inverse, log_se3

log = logging.getLogger(__name__)

LIO = "lio"
VIO = "vio"
TO_VIO = "to_vio"
TO_LIO = "to_lio"


@dataclass(frozen=True)
class SmootherConfig:
    duration: float = 2.0  # seconds of blending per hand-off
    schedule: str = "linear"  # linear | smoothstep
    sign_convention: str = "interpolating"  # interpolating | paper_literal

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if self.schedule not in ("linear", "smoothstep"):
            raise ValueError(f"unknown beta schedule {self.schedule!r}")
        if self.sign_convention not in ("interpolating", "paper_literal"):
            raise ValueError(f"unknown sign convention {self.sign_convention!r}")

    def beta(self, u: float) -> float:
        u = min(max(u, 0.0), 1.0)
        if self.schedule == "smoothstep":
            return 3.0 * u * u - 2.0 * u**3
        return u


def apply_smoothing(
    t_active: Transform,
    t_backup: Transform,
    t_align: Transform,
    beta: float,
    convention: str = "interpolating",
) -> Transform:
    """Blend the active pose toward the aligned backup pose.

    interpolating: geodesic from t_active to t_align * t_backup, exact at
    both endpoints.  paper_literal: t_active * exp(-beta * log(t_active^-1
    * t_align * t_backup)), which at beta=1 lands on the geodesic mirror
    point rather than the backup pose; selectable for comparison.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must be in [0, 1]")
    if beta == 0.0:
        return t_active
    target = compose(t_align, t_backup)
    if convention == "interpolating":
        return geodesic_interp(t_active, target, beta)
    step = log_se3(compose(inverse(t_active), target))
    return compose(t_active, exp_se3(Twist(-beta * step.rho, -beta * step.phi)))


@dataclass(frozen=True)
class LioPose:
    t: float
    pose: Transform
    cov: np.ndarray | None = None
    quat: np.ndarray | None = None  # pass-through for exact re-serialization


@dataclass(frozen=True)
class VioPose:
    t: float
    pose: Transform
    cov: np.ndarray | None = None
    quat: np.ndarray | None = None


@dataclass(frozen=True)
class Health:
    t: float
    sample: HealthSample


@dataclass(frozen=True)
class VioInit:
    t: float
    ready: bool = True


# processing order for events sharing a timestamp: initialization and
# health first, then lio, then vio (so transition blends see both current)
_EVENT_RANK = {VioInit: 0, Health: 1, LioPose: 2, VioPose: 3}


@dataclass(frozen=True)
class FusedPose:
    t: float
    pose: Transform
    source: str  # lio | vio | to_vio | to_lio
    degraded: bool = False
    quat: np.ndarray | None = None


@dataclass(frozen=True)
class SupervisorConfig:
    detector: DetectorConfig = DetectorConfig()
    smoother: SmootherConfig = SmootherConfig()
    kernel: RobustKernel = RobustKernel(c=1.0)
    window_pairs: int = 50  # trailing alignment window size
    pairing_tolerance: float = 0.05  # s
    k_min: int = 10
    clock_skew_tolerance: float = 1e-6  # s
    max_vio_staleness: float = 0.5  # s without vio poses = unavailable
    # While on vio, re-solve the alignment every this many seconds instead
    # of only once per switch.  Off by default: the reference stream is
    # degraded for as long as the hand-off lasts, so refreshing against it
    # is only useful when its failure mode leaves the frame usable.
    realign_period: float | None = None


@dataclass
class Episode:
    source: str
    t_start: float
    t_end: float | None = None
    alignment: AlignmentResult | None = None


class FusionSupervisor:
    """Deterministic event-driven switching core."""

    def __init__(self, config: SupervisorConfig = SupervisorConfig()):
        self.config = config
        self.state = LIO
        self.m_lio = Transform.identity()  # lio frame -> output frame
        self.m_vio: Transform | None = None  # vio frame -> output frame
        self.vio_ready = False
        self.degraded = False
        buf = config.window_pairs * 4
        self.lio_buffer: deque = deque(maxlen=buf)
        self.vio_buffer: deque = deque(maxlen=buf)
        self.last_lio: LioPose | None = None
        self.last_vio: VioPose | None = None
        self.transition_start = 0.0
        self.episodes: list[Episode] = []
        self.alignment_failures = 0  # solver ran and did not converge
        self.alignment_deferrals = 0  # too few usable pairs yet; retried later
        self._last_t = -math.inf
        self._degraded_until = -math.inf  # last health timestamp flagged degraded
        self._last_align_t = -math.inf

    # -- bookkeeping ------------------------------------------------------

    def _check_order(self, t: float):
        if t < self._last_t - self.config.clock_skew_tolerance:
            raise StreamOrderError(f"event at {t} after {self._last_t}")
        self._last_t = max(self._last_t, t)

    def _enter(self, state: str, t: float, alignment: AlignmentResult | None = None):
        if self.episodes:
            self.episodes[-1].t_end = t
        self.episodes.append(Episode(state, t, alignment=alignment))
        self.state = state

    def _vio_available(self, t: float) -> bool:
        if not self.vio_ready or self.last_vio is None:
            return False
        return (t - self.last_vio.t) <= self.config.max_vio_staleness

    # -- alignment --------------------------------------------------------

    def _solve_map(self, reference, incoming, after: float = -math.inf) -> AlignmentResult | None:
        """Align incoming stream items to reference (output-frame) items,
        using only pairs timestamped after the given cutoff."""
        pairs = pair_poses(reference, incoming, self.config.pairing_tolerance)
        pairs = [p for p in pairs if p.timestamp > after]
        pairs = pairs[-self.config.window_pairs:]
        if len(pairs) < self.config.k_min:
            return None
        window = AlignmentWindow(tuple(pairs))
        result = solve_alignment(
            window, self.config.kernel, SolverOptions(k_min=self.config.k_min)
        )
        return result

    def _mapped_lio_buffer(self):
        return [(t, compose(self.m_lio, p), c) for t, p, c in self.lio_buffer]

    def _try_switch_to_vio(self, t: float):
        result = self._solve_map(self._mapped_lio_buffer(), list(self.vio_buffer))
        if result is None:
            self.alignment_deferrals += 1
            log.debug("hand-off to vio deferred at t=%.3f: window not filled", t)
            return
        if not result.converged:
            self.alignment_failures += 1
            log.warning("alignment to vio failed at t=%.3f; staying on lio", t)
            return
        self.m_vio = result.t_align
        self.transition_start = t
        self._last_align_t = t
        self._enter(TO_VIO, t, alignment=result)
        log.info("hand-off to vio at t=%.3f (cost %.3g)", t, result.final_cost)

    def _refresh_vio_alignment(self, t: float):
        result = self._solve_map(self._mapped_lio_buffer(), list(self.vio_buffer))
        self._last_align_t = t
        if result is not None and result.converged:
            self.m_vio = result.t_align
            log.debug("refreshed vio alignment at t=%.3f", t)

    def _try_switch_to_lio(self, t: float):
        # trust only pose pairs collected after lio stopped being flagged:
        # windows straddling the degraded stretch have no rigid consensus
        mapped_vio = [(tt, compose(self.m_vio, p), c) for tt, p, c in self.vio_buffer]
        result = self._solve_map(mapped_vio, list(self.lio_buffer), after=self._degraded_until)
        if result is None:
            self.alignment_deferrals += 1
            log.debug("hand-back to lio deferred at t=%.3f: window not filled", t)
            return
        if not result.converged:
            self.alignment_failures += 1
            log.warning("re-alignment to lio failed at t=%.3f; staying on vio", t)
            return
        self.m_lio = result.t_align
        self.transition_start = t
        self._enter(TO_LIO, t, alignment=result)
        log.info("hand-back to lio at t=%.3f (cost %.3g)", t, result.final_cost)

    # -- event handling ---------------------------------------------------

    def step(self, event) -> FusedPose | None:
        """Consume one event; returns a fused pose when one is emitted."""
        self._check_order(event.t)
        if isinstance(event, VioInit):
            self.vio_ready = event.ready
            return None
        if isinstance(event, Health):
            return self._on_health(event)
        if isinstance(event, LioPose):
            return self._on_lio(event)
        if isinstance(event, VioPose):
            return self._on_vio(event)
        raise TypeError(f"unknown event type {type(event).__name__}")

    def _on_health(self, event: Health) -> None:
        self.degraded = bool(event.sample.debounced_flag)
        t = event.t
        if self.degraded:
            self._degraded_until = t
        if self.state == LIO and self.degraded and self._vio_available(t):
            self._try_switch_to_vio(t)
        elif self.state == VIO and not self.degraded:
            self._try_switch_to_lio(t)
        elif (
            self.state == VIO
            and self.config.realign_period is not None
            and t - self._last_align_t >= self.config.realign_period
        ):
            self._refresh_vio_alignment(t)
        return None

    def _transition_u(self, t: float) -> float:
        return (t - self.transition_start) / self.config.smoother.duration

    def _maybe_finish_transition(self, t: float):
        if self.state in (TO_VIO, TO_LIO) and self._transition_u(t) >= 1.0:
            self._enter(VIO if self.state == TO_VIO else LIO, t)

    def _on_lio(self, event: LioPose) -> FusedPose | None:
        self.lio_buffer.append((event.t, event.pose, event.cov))
        self.last_lio = event
        self._maybe_finish_transition(event.t)
        if self.state == LIO:
            identity_map = self.m_lio is None or np.array_equal(
                self.m_lio.matrix(), np.eye(4)
            )
            if identity_map:
                return FusedPose(event.t, event.pose, LIO, self.degraded, event.quat)
            return FusedPose(
                event.t, compose(self.m_lio, event.pose), LIO, self.degraded, None
            )
        return None

    def _on_vio(self, event: VioPose) -> FusedPose | None:
        self.vio_buffer.append((event.t, event.pose, event.cov))
        self.last_vio = event
        self._maybe_finish_transition(event.t)
        if self.state == VIO:
            return FusedPose(event.t, compose(self.m_vio, event.pose), VIO, False, None)
        if self.state == TO_VIO:
            if self.last_lio is None:
                return None
            beta = self.config.smoother.beta(self._transition_u(event.t))
            active = compose(self.m_lio, self.last_lio.pose)
            out = apply_smoothing(
                active, event.pose, self.m_vio, beta, self.config.smoother.sign_convention
            )
            return FusedPose(event.t, out, TO_VIO, self.degraded, None)
        if self.state == TO_LIO:
            if self.last_lio is None:
                return None
            beta = self.config.smoother.beta(self._transition_u(event.t))
            active = compose(self.m_vio, event.pose)
            out = apply_smoothing(
                active,
                self.last_lio.pose,
                self.m_lio,
                beta,
                self.config.smoother.sign_convention,
            )
            return FusedPose(event.t, out, TO_LIO, False, None)
        return None

    def finish(self, t: float):
        if self.episodes:
            self.episodes[-1].t_end = t
        else:
            self.episodes.append(Episode(self.state, self._last_t, t_end=t))


def merge_events(*streams) -> list:
    """Merge event streams into one deterministic time-ordered sequence."""
    events = [e for stream in streams for e in stream]
    events.sort(key=lambda e: (e.t, _EVENT_RANK[type(e)]))
    return events


def run_supervisor(events, config: SupervisorConfig = SupervisorConfig()):
    """Feed a merged event sequence through a fresh supervisor."""
    sup = FusionSupervisor(config)
    if not sup.episodes:
        first_t = events[0].t if events else 0.0
        sup.episodes.append(Episode(LIO, first_t))
    outputs = []
    for event in events:
        out = sup.step(event)
        if out is not None:
            outputs.append(out)
    sup.finish(events[-1].t if events else 0.0)
    return outputs, sup


# ---------------------------------------------------------------------------
# offline batch driver


@dataclass(frozen=True)
class RunConfig:
    detector: DetectorConfig = DetectorConfig()
    icp: IcpParams = IcpParams()
    smoother: SmootherConfig = SmootherConfig()
    kernel_c: float = 1.0
    window_pairs: int = 50
    pairing_tolerance: float = 0.05
    health_source: str = "detector"  # detector | schedule_oracle
    vio_init_time: float = 5.0
    realign_period: float | None = None  # continuous alignment refresh, off by default
    seed: int = 7

    def __post_init__(self):
        if self.health_source not in ("detector", "schedule_oracle"):
            raise ValueError(f"unknown health source {self.health_source!r}")

    def supervisor_config(self) -> SupervisorConfig:
        return SupervisorConfig(
            detector=self.detector,
            smoother=self.smoother,
            kernel=RobustKernel(c=self.kernel_c),
            window_pairs=self.window_pairs,
            pairing_tolerance=self.pairing_tolerance,
            realign_period=self.realign_period,
        )


def run_config_from_dict(d: dict) -> RunConfig:
    """Strict parser: unknown keys anywhere are rejected."""

    def build(cls, sub: dict):
        known = set(cls.__dataclass_fields__)
        unknown = set(sub) - known
        if unknown:
            raise DataError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
        return cls(**sub)

    d = dict(d)
    kwargs = {}
    if "detector" in d:
        kwargs["detector"] = build(DetectorConfig, d.pop("detector"))
    if "icp" in d:
        kwargs["icp"] = build(IcpParams, d.pop("icp"))
    if "smoother" in d:
        kwargs["smoother"] = build(SmootherConfig, d.pop("smoother"))
    for key in ("kernel_c", "window_pairs", "pairing_tolerance", "health_source",
                "vio_init_time", "realign_period", "seed"):
        if key in d:
            kwargs[key] = d.pop(key)
    if d:
        raise DataError(f"unknown config keys: {sorted(d)}")
    return RunConfig(**kwargs)


def run_config_to_dict(cfg: RunConfig) -> dict:
    return {
        "detector": {
            "tau_n": cfg.detector.tau_n,
            "tau_eps": cfg.detector.tau_eps,
            "debounce_on": cfg.detector.debounce_on,
            "debounce_off": cfg.detector.debounce_off,
        },
        "icp": {
            "gate": cfg.icp.gate,
            "max_iterations": cfg.icp.max_iterations,
            "tolerance": cfg.icp.tolerance,
            "knn": cfg.icp.knn,
            "aniso_ratio": cfg.icp.aniso_ratio,
            "radius_cap": cfg.icp.radius_cap,
            "hessian_weight": cfg.icp.hessian_weight,
        },
        "smoother": {
            "duration": cfg.smoother.duration,
            "schedule": cfg.smoother.schedule,
            "sign_convention": cfg.smoother.sign_convention,
        },
        "kernel_c": cfg.kernel_c,
        "window_pairs": cfg.window_pairs,
        "pairing_tolerance": cfg.pairing_tolerance,
        "health_source": cfg.health_source,
        "vio_init_time": cfg.vio_init_time,
        "realign_period": cfg.realign_period,
        "seed": cfg.seed,
    }


def _scan_paths(scenario_dir) -> list[tuple[int, str]]:
    scans_dir = os.path.join(scenario_dir, "scans")
    if not os.path.isdir(scans_dir):
        raise DataError(f"missing scans directory: {scans_dir}")
    out = []
    for name in sorted(os.listdir(scans_dir)):
        if name.startswith("scan_") and name.endswith(".xyz"):
            out.append((int(name[5:11]), os.path.join(scans_dir, name)))
    return out


def detect_health(scenario_dir, icp_params: IcpParams, detector_config: DetectorConfig):
    """Run scan-to-scan matching plus the detector over a scenario directory."""
    meta = read_json(os.path.join(scenario_dir, "scenario.json"))
    scan_rate = float(meta["scan_rate"])
    detector = DegeneracyDetector(detector_config)
    samples = []
    prev_scan = None
    prev_transform = Transform.identity()
    for index, path in _scan_paths(scenario_dir):
        t = index / scan_rate
        scan = ScanFrame(t, read_scan_xyz(path))
        if prev_scan is None:
            prev_scan = scan
            continue
        if len(scan) >= 10 and len(prev_scan) >= 10:
            prev_transform, report = icp_align(
                scan, prev_scan, icp_params, initial=prev_transform
            )
        else:
            from .scan_match import MatchReport

            report = MatchReport(float("inf"), len(scan), False, 0, 0.0)
        samples.append(detector.step(t, report))
        prev_scan = scan
    return samples


def oracle_health(scenario_dir) -> list[HealthSample]:
    """Zero-latency health flags derived straight from the schedule."""
    meta = read_json(os.path.join(scenario_dir, "scenario.json"))
    scan_rate = float(meta["scan_rate"])
    duration = float(meta["duration"])
    windows = read_json(os.path.join(scenario_dir, "schedule.json"))
    lio_windows = [(w["t_start"], w["t_end"]) for w in windows if w["subsystem"] == "lio"]
    samples = []
    n = int(math.floor(duration * scan_rate))
    for k in range(1, n):
        t = k / scan_rate
        flag = int(any(lo <= t < hi for lo, hi in lio_windows))
        samples.append(HealthSample(t, 0 if flag else 10**6, 0.0, flag, flag))
    return samples


def _pose_events(scenario_dir, name, cls):
    tum = read_tum_with_quats(os.path.join(scenario_dir, f"{name}.tum"))
    cov_path = os.path.join(scenario_dir, f"{name}.cov.csv")
    covs = read_covariances(cov_path) if os.path.exists(cov_path) else None
    events = []
    for i, (t, pose, quat) in enumerate(tum):
        cov = None
        if covs is not None and i < len(covs) and abs(covs[i][0] - t) < 1e-3:
            cov = covs[i][1]
        events.append(cls(t, pose, cov, quat))
    return events


def run_offline(scenario_dir, config: RunConfig, out_dir=None, write_health=True):
    """Full offline pass: health, supervision, fused trajectory, report.

    Writes fused.tum, report.json and (detector mode) health.csv into
    out_dir (defaults to the scenario directory).  Returns (outputs,
    supervisor, health_samples).
    """
    out_dir = out_dir or scenario_dir
    os.makedirs(out_dir, exist_ok=True)
    lio_events = _pose_events(scenario_dir, "lio", LioPose)
    vio_events = _pose_events(scenario_dir, "vio", VioPose)
    if not lio_events:
        raise DataError(f"empty lio stream in {scenario_dir}")
    if config.health_source == "detector":
        health = detect_health(scenario_dir, config.icp, config.detector)
    else:
        health = oracle_health(scenario_dir)
    health_events = [Health(s.timestamp, s) for s in health]
    init_events = [VioInit(config.vio_init_time)]
    events = merge_events(lio_events, vio_events, health_events, init_events)
    outputs, sup = run_supervisor(events, config.supervisor_config())

    write_tum(
        os.path.join(out_dir, "fused.tum"),
        [(o.t, o.pose, o.quat) for o in outputs],
        header="fused output",
    )
    if write_health and health:
        write_health_csv(os.path.join(out_dir, "health.csv"), health)
    write_json(os.path.join(out_dir, "report.json"), build_report(outputs, sup, health, config))
    return outputs, sup, health


def build_report(outputs, sup: FusionSupervisor, health, config: RunConfig) -> dict:
    episodes = []
    for ep in sup.episodes:
        entry = {"source": ep.source, "t_start": ep.t_start, "t_end": ep.t_end}
        if ep.alignment is not None:
            entry["alignment"] = alignment_to_json(ep.alignment)
        episodes.append(entry)
    degraded_outputs = sum(1 for o in outputs if o.degraded)
    report = {
        "episodes": episodes,
        "vio_episode_count": sum(1 for ep in sup.episodes if ep.source == VIO),
        "alignment_failures": sup.alignment_failures,
        "alignment_deferrals": sup.alignment_deferrals,
        "output_count": len(outputs),
        "degraded_output_count": degraded_outputs,
        "health_summary": {
            "samples": len(health),
            "raw_degraded_fraction": (
                sum(s.raw_flag for s in health) / len(health) if health else 0.0
            ),
            "debounced_intervals": flagged_intervals(health),
        },
        "config": run_config_to_dict(config),
    }
    return report
