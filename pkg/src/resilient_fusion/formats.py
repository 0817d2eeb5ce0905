"""File formats: TUM trajectories, xyz scans, covariance sidecars, JSON.

Rotation matrices are converted to quaternions only here, at the file
boundary.  All numeric output is written with 9 significant digits so that
regenerated files are byte-identical and diffable.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from .errors import DataError
from .se3 import Transform


def quaternion_from_rotation(rot: np.ndarray) -> np.ndarray:
    """Unit quaternion (x, y, z, w) from a rotation matrix, Shepperd's method.

    Sign canonicalized so that w >= 0 (and the first nonzero component is
    positive when w == 0), keeping written files deterministic.
    """
    m = np.asarray(rot, dtype=float)
    t = np.trace(m)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s, 0.25 * s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        if i == 0:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q = np.array(
                [0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s, (m[2, 1] - m[1, 2]) / s]
            )
        elif i == 1:
            s = math.sqrt(1.0 - m[0, 0] + m[1, 1] - m[2, 2]) * 2.0
            q = np.array(
                [(m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s, (m[0, 2] - m[2, 0]) / s]
            )
        else:
            s = math.sqrt(1.0 - m[0, 0] - m[1, 1] + m[2, 2]) * 2.0
            q = np.array(
                [(m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s, (m[1, 0] - m[0, 1]) / s]
            )
    q = q / np.linalg.norm(q)
    if q[3] < 0.0 or (q[3] == 0.0 and q[np.nonzero(q)[0][0]] < 0.0):
        q = -q
    return q


def rotation_from_quaternion(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from quaternion (x, y, z, w); normalizes the input."""
    x, y, z, w = np.asarray(q, dtype=float)
    n = x * x + y * y + z * z + w * w
    if n < 1e-12:
        raise DataError("zero-norm quaternion")
    s = 2.0 / n
    xx, yy, zz = x * x * s, y * y * s, z * z * s
    xy, xz, yz = x * y * s, x * z * s, y * z * s
    wx, wy, wz = w * x * s, w * y * s, w * z * s
    return np.array(
        [
            [1.0 - yy - zz, xy - wz, xz + wy],
            [xy + wz, 1.0 - xx - zz, yz - wx],
            [xz - wy, yz + wx, 1.0 - xx - yy],
        ]
    )


def write_tum(path, stamped_poses, header: str | None = None) -> None:
    """Write poses in TUM format: `timestamp tx ty tz qx qy qz qw`.

    Items are (t, Transform) or (t, Transform, quat_xyzw).  A provided
    quaternion is written as-is, so poses parsed from a TUM file and passed
    through unchanged reproduce their source lines byte for byte (a fresh
    matrix->quaternion conversion can flip the last rounded digit).
    """
    lines = []
    if header:
        lines.append(f"# {header}")
    for item in stamped_poses:
        t, pose = item[0], item[1]
        q = item[2] if len(item) > 2 and item[2] is not None else None
        if q is None:
            q = quaternion_from_rotation(pose.rotation)
        tx, ty, tz = pose.translation
        lines.append(
            f"{t:.6f} {tx:.9g} {ty:.9g} {tz:.9g} {q[0]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f}"
        )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _parse_tum_line(path, lineno, line):
    parts = line.split()
    if len(parts) < 8:
        raise DataError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
    vals = [float(p) for p in parts[:8]]
    rot = rotation_from_quaternion(vals[4:8])
    return vals[0], Transform(rot, np.array(vals[1:4])), np.array(vals[4:8])


def read_tum(path) -> list[tuple[float, Transform]]:
    return [(t, pose) for t, pose, _ in read_tum_with_quats(path)]


def read_tum_with_quats(path) -> list[tuple[float, Transform, np.ndarray]]:
    """Like read_tum but keeps the file's quaternion for exact re-serialization."""
    if not os.path.exists(path):
        raise DataError(f"trajectory file not found: {path}")
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            out.append(_parse_tum_line(path, lineno, line))
    return out


def write_scan_xyz(path, points: np.ndarray, comment: str | None = None) -> None:
    """Scan file: '#' comments, `count N`, then N `x y z` lines."""
    points = np.asarray(points, dtype=float)
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append(f"count {len(points)}")
    for x, y, z in points:
        lines.append(f"{x:.9g} {y:.9g} {z:.9g}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_scan_xyz(path) -> np.ndarray:
    if not os.path.exists(path):
        raise DataError(f"scan file not found: {path}")
    with open(path) as f:
        lines = [ln.strip() for ln in f]
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    if not body or not body[0].startswith("count "):
        raise DataError(f"{path}: missing 'count N' line")
    n = int(body[0].split()[1])
    if len(body) - 1 != n:
        raise DataError(f"{path}: expected {n} points, found {len(body) - 1}")
    if n == 0:
        return np.zeros((0, 3))
    pts = np.array([[float(v) for v in ln.split()] for ln in body[1:]])
    if pts.shape[1] != 3 or not np.isfinite(pts).all():
        raise DataError(f"{path}: malformed point rows")
    return pts


def scan_filename(index: int) -> str:
    return f"scan_{index:06d}.xyz"


def write_covariances(path, stamped_covs) -> None:
    """Sidecar CSV: one row per pose, `t` followed by the 36 row-major entries."""
    header = "t," + ",".join(f"c{i}{j}" for i in range(6) for j in range(6))
    lines = [header]
    for t, cov in stamped_covs:
        flat = np.asarray(cov, dtype=float).reshape(36)
        lines.append(f"{t:.6f}," + ",".join(f"{v:.9g}" for v in flat))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_covariances(path) -> list[tuple[float, np.ndarray]]:
    if not os.path.exists(path):
        raise DataError(f"covariance file not found: {path}")
    out = []
    with open(path) as f:
        rows = [ln.strip() for ln in f if ln.strip()]
    for row in rows[1:]:
        vals = [float(v) for v in row.split(",")]
        if len(vals) != 37:
            raise DataError(f"{path}: covariance row needs 37 fields, got {len(vals)}")
        out.append((vals[0], np.array(vals[1:]).reshape(6, 6)))
    return out


def round_sig(value: float, digits: int = 9) -> float:
    if not math.isfinite(value):
        return value
    return float(f"{value:.{digits}g}")


def _round_floats(obj):
    if isinstance(obj, float):
        return round_sig(obj)
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return round_sig(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _round_floats(obj.tolist())
    return obj


def write_json(path, obj) -> None:
    """JSON with all floats rounded to 9 significant digits."""
    with open(path, "w") as f:
        json.dump(_round_floats(obj), f, indent=2, allow_nan=True)
        f.write("\n")


def read_json(path):
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    with open(path) as f:
        return json.load(f)


def transform_to_json(pose: Transform) -> dict:
    """Translation + quaternion encoding used inside JSON reports."""
    q = quaternion_from_rotation(pose.rotation)
    return {
        "translation": [float(v) for v in pose.translation],
        "quaternion_xyzw": [float(v) for v in q],
    }


def transform_from_json(obj) -> Transform:
    rot = rotation_from_quaternion(np.array(obj["quaternion_xyzw"], dtype=float))
    return Transform(rot, np.array(obj["translation"], dtype=float))
