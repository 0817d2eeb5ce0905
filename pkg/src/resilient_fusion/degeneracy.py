"""Degradation detection over a stream of scan-match reports.

A scan is flagged degraded when the feature count falls below tau_n or the
mean squared alignment residual exceeds tau_eps (an unconverged match, with
its +inf residual sentinel, always flags).  The raw per-scan flag is
debounced with asymmetric hysteresis: quick to assert, slower to clear.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .errors import DataError, StreamOrderError
from .scan_match import MatchReport


@dataclass(frozen=True)
class DetectorConfig:
    tau_n: int = 100  # feature-count threshold
    tau_eps: float = 0.09  # residual threshold, m^2
    debounce_on: int = 3  # consecutive raw 1s before asserting
    debounce_off: int = 5  # consecutive raw 0s before clearing

    def __post_init__(self):
        if self.tau_n < 0:
            raise ValueError("tau_n must be >= 0")
        if self.tau_eps <= 0.0:
            raise ValueError("tau_eps must be > 0")
        if self.debounce_on < 1 or self.debounce_off < 1:
            raise ValueError("debounce counts must be >= 1")


@dataclass(frozen=True)
class HealthSample:
    timestamp: float
    n_feat: int
    eps_align: float
    raw_flag: int
    debounced_flag: int


def evaluate(report: MatchReport, config: DetectorConfig) -> int:
    """Raw degradation flag for one scan-match report."""
    return int(report.n_feat < config.tau_n or report.eps_align > config.tau_eps)


class DegeneracyDetector:
    """Single-writer stream processor turning MatchReports into HealthSamples.

    Use one instance per scan stream; instances are independent.
    """

    def __init__(self, config: DetectorConfig = DetectorConfig()):
        self.config = config
        self._last_t: float | None = None
        self._run = 0  # consecutive raw samples agreeing with each other
        self._run_value = 0
        self._state = 0

    def step(self, timestamp: float, report: MatchReport) -> HealthSample:
        if self._last_t is not None and timestamp <= self._last_t:
            raise StreamOrderError(
                f"health timestamps must increase: {timestamp} after {self._last_t}"
            )
        self._last_t = timestamp
        raw = evaluate(report, self.config)
        if raw == self._run_value:
            self._run += 1
        else:
            self._run_value = raw
            self._run = 1
        if raw == 1 and self._state == 0 and self._run >= self.config.debounce_on:
            self._state = 1
        elif raw == 0 and self._state == 1 and self._run >= self.config.debounce_off:
            self._state = 0
        return HealthSample(timestamp, report.n_feat, report.eps_align, raw, self._state)


def write_health_csv(path, samples) -> None:
    lines = ["t,n_feat,eps_align,raw,debounced"]
    for s in samples:
        lines.append(f"{s.timestamp:.9g},{s.n_feat},{s.eps_align:.9g},{s.raw_flag},{s.debounced_flag}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_health_csv(path) -> list[HealthSample]:
    if not os.path.exists(path):
        raise DataError(f"health file not found: {path}")
    with open(path) as f:
        rows = [ln.strip() for ln in f if ln.strip()]
    if not rows or rows[0] != "t,n_feat,eps_align,raw,debounced":
        raise DataError(f"{path}: unexpected header")
    out = []
    for row in rows[1:]:
        t, n, eps, raw, deb = row.split(",")
        out.append(HealthSample(float(t), int(n), float(eps), int(raw), int(deb)))
    return out


def flagged_intervals(samples, use_debounced: bool = True) -> list[tuple[float, float]]:
    """Contiguous [t_start, t_end] intervals where the flag is asserted."""
    intervals = []
    start = None
    last_t = None
    for s in samples:
        flag = s.debounced_flag if use_debounced else s.raw_flag
        if flag and start is None:
            start = s.timestamp
        elif not flag and start is not None:
            intervals.append((start, last_t))
            start = None
        last_t = s.timestamp
    if start is not None:
        intervals.append((start, last_t))
    return intervals


def interval_iou(a: list[tuple[float, float]], b: list[tuple[float, float]]) -> float:
    """Intersection-over-union of two unions of time intervals."""

    def total(intervals):
        return sum(e - s for s, e in intervals)

    def intersect(x, y):
        out = 0.0
        for s1, e1 in x:
            for s2, e2 in y:
                out += max(0.0, min(e1, e2) - max(s1, s2))
        return out

    inter = intersect(a, b)
    union = total(a) + total(b) - inter
    if union <= 0.0:
        return 1.0 if not a and not b else 0.0
    return inter / union
