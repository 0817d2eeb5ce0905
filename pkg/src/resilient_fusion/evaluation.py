"""Trajectory accuracy metrics: ATE RMSE, RPE, and drift rate.

ATE is position-only (the reference tables are meter-denominated) and by
default rigidly aligns the estimate to the reference first.  RPE compares
relative motions over a fixed time delta and is insensitive to any global
offset.  Drift rate superimposes the first matched poses and reports the
final-position gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateGeometryError
from .se3 import Transform, compose, inverse, rotation_angle, umeyama_align

DEFAULT_TOLERANCE = 0.02  # s, timestamp association
DEFAULT_RPE_DELTA = 1.0  # s


@dataclass(frozen=True)
class MetricsReport:
    ate_rmse: float  # m
    rpe_trans: float  # m per delta interval
    rpe_rot: float  # deg per delta interval
    drift_rate: float  # m, final-position error after origin alignment
    matched_pose_count: int
    alignment_used: str  # "none" | "rigid"

    def to_dict(self) -> dict:
        return {
            "ate_rmse": self.ate_rmse,
            "rpe_trans": self.rpe_trans,
            "rpe_rot": self.rpe_rot,
            "drift_rate": self.drift_rate,
            "matched_pose_count": self.matched_pose_count,
            "alignment_used": self.alignment_used,
        }


def _validate(traj, name):
    if len(traj) < 2:
        raise DataError(f"{name} needs at least 2 poses")
    times = [t for t, _ in traj]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise DataError(f"{name} timestamps must be strictly increasing")


def associate(est, ref, tolerance: float = DEFAULT_TOLERANCE):
    """Greedy nearest-timestamp pairing of two trajectories.

    Returns a list of (timestamp_est, est_pose, ref_pose); fails when
    fewer than 2 matches exist.
    """
    _validate(est, "est")
    _validate(ref, "ref")
    ref_times = np.array([t for t, _ in ref])
    candidates = []
    for i, (t, _) in enumerate(est):
        j0 = int(np.searchsorted(ref_times, t - tolerance, side="left"))
        j1 = int(np.searchsorted(ref_times, t + tolerance, side="right"))
        for j in range(j0, j1):
            candidates.append((abs(t - ref_times[j]), i, j))
    candidates.sort()
    used_i, used_j = set(), set()
    matches = []
    for _, i, j in candidates:
        if i in used_i or j in used_j:
            continue
        used_i.add(i)
        used_j.add(j)
        matches.append((i, j))
    matches.sort()
    if len(matches) < 2:
        raise DataError("trajectories share fewer than 2 timestamps within tolerance")
    return [(est[i][0], est[i][1], ref[j][1]) for i, j in matches]


def ate_rmse(est, ref, alignment: str = "rigid", tolerance: float = DEFAULT_TOLERANCE):
    """Root-mean-square position error after optional rigid alignment.

    Returns (rmse_m, alignment_used, per_pose_errors).  Rigid mode falls
    back to "none" when the matched positions are too degenerate to align
    (under 3 points or collinear).
    """
    if alignment not in ("none", "rigid"):
        raise ValueError(f"unknown alignment mode {alignment!r}")
    matched = associate(est, ref, tolerance)
    est_pts = np.array([p.translation for _, p, _ in matched])
    ref_pts = np.array([r.translation for _, _, r in matched])
    used = alignment
    errors = np.linalg.norm(est_pts - ref_pts, axis=1)
    if alignment == "rigid":
        try:
            fit = umeyama_align(est_pts, ref_pts)
            fitted = np.linalg.norm(fit.apply(est_pts) - ref_pts, axis=1)
            # the identity stays a candidate alignment, so rigid mode can
            # never come out numerically worse than no alignment
            if np.sqrt(np.mean(fitted**2)) < np.sqrt(np.mean(errors**2)):
                errors = fitted
        except DegenerateGeometryError:
            used = "none"
    rmse = float(np.sqrt(np.mean(errors**2)))
    times = [t for t, _, _ in matched]
    return rmse, used, list(zip(times, errors.tolist()))


def rpe(est, ref, delta: float = DEFAULT_RPE_DELTA, tolerance: float = DEFAULT_TOLERANCE):
    """Relative pose error over time intervals of length delta.

    For each matched pose i and the matched pose j closest to t_i + delta,
    the error transform is (ref_i^-1 ref_j)^-1 (est_i^-1 est_j); reported
    as (RMS translation m, RMS rotation deg).
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    matched = associate(est, ref, tolerance)
    times = np.array([t for t, _, _ in matched])
    trans_sq, rot_sq = [], []
    for i, t in enumerate(times):
        j = int(np.searchsorted(times, t + delta))
        best = None
        for cand in (j - 1, j):
            if i < cand < len(times) and abs(times[cand] - (t + delta)) <= tolerance:
                if best is None or abs(times[cand] - (t + delta)) < abs(times[best] - (t + delta)):
                    best = cand
        if best is None:
            continue
        _, est_i, ref_i = matched[i]
        _, est_j, ref_j = matched[best]
        motion_est = compose(inverse(est_i), est_j)
        motion_ref = compose(inverse(ref_i), ref_j)
        err = compose(inverse(motion_ref), motion_est)
        trans_sq.append(float(err.translation @ err.translation))
        rot_sq.append(rotation_angle(err.rotation) ** 2)
    if not trans_sq:
        raise DataError(f"no pose pairs separated by {delta} s within tolerance")
    return (
        float(np.sqrt(np.mean(trans_sq))),
        float(math.degrees(np.sqrt(np.mean(rot_sq)))),
    )


def drift_rate(est, ref, tolerance: float = DEFAULT_TOLERANCE) -> float:
    """Distance between the final matched positions after superimposing the
    first matched poses."""
    matched = associate(est, ref, tolerance)
    _, est0, ref0 = matched[0]
    anchor = compose(ref0, inverse(est0))
    _, est_last, ref_last = matched[-1]
    aligned_last = compose(anchor, est_last)
    return float(np.linalg.norm(aligned_last.translation - ref_last.translation))


def evaluate_trajectories(
    est,
    ref,
    alignment: str = "rigid",
    tolerance: float = DEFAULT_TOLERANCE,
    rpe_delta: float = DEFAULT_RPE_DELTA,
):
    """Full metric sweep; returns (MetricsReport, per-pose ATE errors)."""
    rmse, used, errors = ate_rmse(est, ref, alignment, tolerance)
    try:
        rpe_t, rpe_r = rpe(est, ref, rpe_delta, tolerance)
    except DataError:
        rpe_t, rpe_r = float("nan"), float("nan")
    drift = drift_rate(est, ref, tolerance)
    report = MetricsReport(
        ate_rmse=rmse,
        rpe_trans=rpe_t,
        rpe_rot=rpe_r,
        drift_rate=drift,
        matched_pose_count=len(errors),
        alignment_used=used,
    )
    return report, errors


def write_errors_csv(path, errors) -> None:
    lines = ["t,err_m"] + [f"{t:.9g},{e:.9g}" for t, e in errors]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
