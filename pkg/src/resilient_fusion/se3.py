"""Exact SE(3)/so(3) Lie-group arithmetic and rigid point-set alignment.

Rotations are stored as 3x3 orthonormal matrices throughout; quaternions
appear only at the trajectory-file boundary (see formats.py).  Twists are
ordered (rho, phi): translational part first, rotational part second, and
6x6 covariances follow the same ordering.

All functions are pure and never mutate their arguments; Transform and
Twist values are immutable after construction, so everything here is safe
to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError

# Below this rotation angle, closed-form coefficients switch to their
# Taylor expansions (standard double-precision cutoff).
SMALL_ANGLE = 1e-6
# Angles within this margin of pi take the eigenvector branch of the log.
PI_MARGIN = 1e-6


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Transform:
    """Rigid transform: x -> rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _freeze(self.rotation))
        object.__setattr__(self, "translation", _freeze(self.translation))
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("Transform expects a 3x3 rotation and 3-vector translation")

    @classmethod
    def identity(cls) -> "Transform":
        return cls(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Transform":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to one (3,) point or an (N, 3) array of points."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation


@dataclass(frozen=True)
class Twist:
    """se(3) element: rho is the translational part (m), phi rotational (rad)."""

    rho: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rho", _freeze(self.rho))
        object.__setattr__(self, "phi", _freeze(self.phi))
        if self.rho.shape != (3,) or self.phi.shape != (3,):
            raise ValueError("Twist expects two 3-vectors")

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "Twist":
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:6])

    @property
    def vector(self) -> np.ndarray:
        """6-vector (rho, phi)."""
        return np.concatenate([self.rho, self.phi])

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.rho @ self.rho + self.phi @ self.phi))


def hat(phi) -> np.ndarray:
    """Skew matrix of a 3-vector: hat(a) @ b == cross(a, b)."""
    x, y, z = np.asarray(phi, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def exp_so3(phi) -> np.ndarray:
    """Rodrigues formula; Taylor fallback below SMALL_ANGLE."""
    phi = np.asarray(phi, dtype=float)
    angle = float(np.linalg.norm(phi))
    k = hat(phi)
    if angle < SMALL_ANGLE:
        a2 = angle * angle
        # sin(t)/t and (1-cos t)/t^2 to second order
        return np.eye(3) + (1.0 - a2 / 6.0) * k + (0.5 - a2 / 24.0) * (k @ k)
    return np.eye(3) + (np.sin(angle) / angle) * k + ((1.0 - np.cos(angle)) / angle**2) * (k @ k)


def rotation_angle(rot: np.ndarray) -> float:
    """Angle of a rotation matrix in [0, pi]."""
    c = 0.5 * (np.trace(rot) - 1.0)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def _pi_axis(rot: np.ndarray) -> np.ndarray:
    # Axis for angles at/near pi via the dominant eigenvector of the
    # symmetric part; sign fixed so the first nonzero component is positive
    # (keeps golden outputs deterministic).
    sym = 0.5 * (rot + rot.T)
    w, v = np.linalg.eigh(sym)
    axis = v[:, np.argmax(w)]
    axis = axis / np.linalg.norm(axis)
    for comp in axis:
        if abs(comp) > 1e-12:
            if comp < 0.0:
                axis = -axis
            break
    return axis


def log_so3(rot: np.ndarray, return_flag: bool = False):
    """Rotation vector with norm <= pi.

    With return_flag=True also returns a bool that is True when the angle
    was within PI_MARGIN of pi and the eigenvector branch was taken (the
    axis sign is then a convention, not data).
    """
    rot = np.asarray(rot, dtype=float)
    angle = rotation_angle(rot)
    near_pi = (np.pi - angle) < PI_MARGIN
    if near_pi:
        axis = _pi_axis(rot)
        w = vee(rot - rot.T)  # 2 sin(angle) * axis away from exactly pi
        if np.linalg.norm(w) > 1e-9 and w @ axis < 0.0:
            axis = -axis
        phi = angle * axis
    else:
        w = 0.5 * vee(rot - rot.T)  # = sin(angle) * axis
        s = np.linalg.norm(w)
        if angle < SMALL_ANGLE:
            phi = (1.0 + angle * angle / 6.0) * w
        else:
            phi = (angle / s) * w
    if return_flag:
        return phi, near_pi
    return phi


def _jl_coeffs(angle: float):
    # coefficients for J_l = I + b*hat + c*hat^2
    if angle < SMALL_ANGLE:
        a2 = angle * angle
        return 0.5 - a2 / 24.0, 1.0 / 6.0 - a2 / 120.0
    b = (1.0 - np.cos(angle)) / (angle * angle)
    c = (angle - np.sin(angle)) / (angle**3)
    return b, c


def so3_left_jacobian(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    angle = float(np.linalg.norm(phi))
    k = hat(phi)
    b, c = _jl_coeffs(angle)
    return np.eye(3) + b * k + c * (k @ k)


def so3_left_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    angle = float(np.linalg.norm(phi))
    k = hat(phi)
    if angle < SMALL_ANGLE:
        coef = 1.0 / 12.0 + angle * angle / 720.0
    else:
        half = 0.5 * angle
        # 1 - (t/2)cot(t/2), stable through t -> pi
        coef = (1.0 - half * np.cos(half) / np.sin(half)) / (angle * angle)
    return np.eye(3) - 0.5 * k + coef * (k @ k)


def exp_se3(xi: Twist) -> Transform:
    """Twist to Transform; translation couples through the left Jacobian."""
    rot = exp_so3(xi.phi)
    trans = so3_left_jacobian(xi.phi) @ xi.rho
    return Transform(rot, trans)


def log_se3(t: Transform, return_flag: bool = False):
    phi, near_pi = log_so3(t.rotation, return_flag=True)
    rho = so3_left_jacobian_inv(phi) @ t.translation
    xi = Twist(rho, phi)
    if return_flag:
        return xi, near_pi
    return xi


def compose(a: Transform, b: Transform) -> Transform:
    return Transform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(t: Transform) -> Transform:
    rt = t.rotation.T
    return Transform(rt, -(rt @ t.translation))


def se3_distance(a: Transform, b: Transform) -> tuple[float, float]:
    """(translation distance m, rotation distance rad) between two transforms."""
    d = compose(inverse(a), b)
    return float(np.linalg.norm(d.translation)), rotation_angle(d.rotation)


def _q_matrix(rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    # Translation/rotation coupling block of the SE(3) left Jacobian.
    angle = float(np.linalg.norm(phi))
    rx = hat(rho)
    px = hat(phi)
    if angle < SMALL_ANGLE:
        c2 = 1.0 / 6.0
        c3 = 1.0 / 24.0
        c4 = 1.0 / 120.0
    else:
        a2 = angle * angle
        c2 = (angle - np.sin(angle)) / (angle * a2)
        c3 = (0.5 * a2 + np.cos(angle) - 1.0) / (a2 * a2)
        c4 = 0.5 * (c3 + 3.0 * (angle - np.sin(angle) - angle * a2 / 6.0) / (a2 * a2 * angle))
    pr = px @ rx
    rp = rx @ px
    q = 0.5 * rx
    q += c2 * (pr + rp + px @ rp)
    q += c3 * (px @ pr + rp @ px - 3.0 * pr @ px)
    q += c4 * (pr @ px @ px + px @ rp @ px)
    return q


def se3_left_jacobian(xi: Twist) -> np.ndarray:
    """6x6 left Jacobian of SE(3), (rho, phi) block ordering."""
    jl = so3_left_jacobian(xi.phi)
    out = np.zeros((6, 6))
    out[:3, :3] = jl
    out[3:, 3:] = jl
    out[:3, 3:] = _q_matrix(xi.rho, xi.phi)
    return out


def se3_left_jacobian_inv(xi: Twist) -> np.ndarray:
    jli = so3_left_jacobian_inv(xi.phi)
    q = _q_matrix(xi.rho, xi.phi)
    out = np.zeros((6, 6))
    out[:3, :3] = jli
    out[3:, 3:] = jli
    out[:3, 3:] = -jli @ q @ jli
    return out


def se3_right_jacobian_inv(xi: Twist) -> np.ndarray:
    return se3_left_jacobian_inv(Twist(-xi.rho, -xi.phi))


def mahalanobis_sq(xi: Twist, sigma: np.ndarray) -> float:
    """xi^T sigma^-1 xi via Cholesky solve; sigma must be symmetric PD."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (6, 6):
        raise ValueError("covariance must be 6x6")
    scale = max(1.0, float(np.abs(sigma).max()))
    if float(np.abs(sigma - sigma.T).max()) > 1e-9 * scale:
        raise ValueError("covariance is not symmetric")
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive-definite") from exc
    y = np.linalg.solve(chol, xi.vector)
    return float(y @ y)


def geodesic_interp(a: Transform, b: Transform, beta: float) -> Transform:
    """Point at fraction beta along the geodesic from a to b.

    beta=0 returns a itself and beta=1 returns b itself (no round trip
    through the log map at the endpoints).
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    if beta == 0.0:
        return a
    if beta == 1.0:
        return b
    step = log_se3(compose(inverse(a), b))
    return compose(a, exp_se3(Twist(beta * step.rho, beta * step.phi)))


def umeyama_align(est: np.ndarray, ref: np.ndarray) -> Transform:
    """Rigid transform (no scale) minimizing sum ||T(est_i) - ref_i||^2.

    Needs >= 3 paired points that are not all (near-)collinear.
    """
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if est.shape != ref.shape or est.ndim != 2 or est.shape[1] != 3:
        raise ValueError("expected matching (N, 3) point arrays")
    n = est.shape[0]
    if n < 3:
        raise DegenerateGeometryError(f"need at least 3 paired points, got {n}")
    mu_e = est.mean(axis=0)
    mu_r = ref.mean(axis=0)
    cov = (est - mu_e).T @ (ref - mu_r) / n
    u, s, vt = np.linalg.svd(cov)
    spread = max(
        float(np.abs(est - mu_e).max(initial=0.0)),
        float(np.abs(ref - mu_r).max(initial=0.0)),
        1e-30,
    )
    if s[1] <= 1e-9 * spread * spread:
        raise DegenerateGeometryError("point sets are collinear or coincident")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Transform(rot, mu_r - rot @ mu_e)
