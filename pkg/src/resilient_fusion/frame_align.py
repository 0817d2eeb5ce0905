"""Robust SE(3) alignment between two odometry streams.

Given K timestamp-paired pose estimates from a reference stream (lio) and
a secondary stream (vio), finds the fixed transform T minimizing

    sum_k rho( || log( T_lio_k * (T * T_vio_k)^-1 ) ||^2_{Sigma_k^-1} )

with a Cauchy robust kernel, so a minority of grossly wrong pairs (e.g.
poses captured while the reference was drifting) cannot drag the estimate.
The solve is iteratively reweighted Gauss-Newton on a left perturbation
exp(delta) * T, with Levenberg damping as a fallback when the normal
equations go near-singular or a plain step fails to reduce the cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .se3 import (
    Transform,
    Twist,
    compose,
    inverse,
    log_se3,
    mahalanobis_sq,
    se3_right_jacobian_inv,
)

# Fallback measurement covariance when a stream carries none:
# 0.1 m standard deviation per translation axis, 0.5 deg per rotation axis.
DEFAULT_SIGMA = np.diag([0.01] * 3 + [math.radians(0.5) ** 2] * 3)


@dataclass(frozen=True)
class PosePair:
    timestamp: float
    t_lio: Transform
    t_vio: Transform
    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.shape != (6, 6):
            raise ValueError("sigma must be 6x6")
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True)
class AlignmentWindow:
    pairs: tuple

    def __post_init__(self):
        pairs = tuple(self.pairs)
        for a, b in zip(pairs, pairs[1:]):
            if b.timestamp <= a.timestamp:
                raise ValueError("pair timestamps must be strictly increasing")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True)
class RobustKernel:
    c: float = 1.0  # Cauchy scale, in units of the normalized residual

    def __post_init__(self):
        if self.c <= 0.0:
            raise ValueError("kernel scale must be positive")


def cauchy_rho(s: float, c: float) -> float:
    """Robust loss of a squared residual s: (c^2/2) ln(1 + s/c^2)."""
    return 0.5 * c * c * math.log1p(s / (c * c))


def cauchy_weight(s: float, c: float) -> float:
    """d rho / d s = 1 / (2 (1 + s/c^2)); monotonically decreasing in s."""
    return 0.5 / (1.0 + s / (c * c))


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 50
    tol: float = 1e-8  # update-norm termination threshold
    k_min: int = 10


@dataclass(frozen=True)
class AlignmentResult:
    t_align: Transform
    final_cost: float
    iterations: int
    converged: bool
    inlier_fraction: float


def pair_poses(lio, vio, tolerance: float):
    """Greedy nearest-timestamp association of two time-ordered pose streams.

    Stream items are (t, Transform) or (t, Transform, covariance).  Each
    pose is used at most once; candidate pairs farther apart than the
    tolerance are dropped.  The pair covariance is the sum of the two pose
    covariances (DEFAULT_SIGMA standing in for a missing one).
    """
    if tolerance < 0.0:
        raise ValueError("tolerance must be >= 0")
    lio = list(lio)
    vio = list(vio)
    vio_times = np.array([item[0] for item in vio])
    candidates = []
    for i, item in enumerate(lio):
        t = item[0]
        j0 = int(np.searchsorted(vio_times, t - tolerance, side="left"))
        j1 = int(np.searchsorted(vio_times, t + tolerance, side="right"))
        for j in range(j0, j1):
            candidates.append((abs(t - vio_times[j]), i, j))
    candidates.sort()
    used_i: set[int] = set()
    used_j: set[int] = set()
    matches = []
    for _, i, j in candidates:
        if i in used_i or j in used_j:
            continue
        used_i.add(i)
        used_j.add(j)
        matches.append((i, j))
    matches.sort()

    def cov_of(item):
        return np.asarray(item[2], dtype=float) if len(item) > 2 and item[2] is not None else DEFAULT_SIGMA

    out = []
    for i, j in matches:
        sigma = cov_of(lio[i]) + cov_of(vio[j])
        out.append(PosePair(lio[i][0], lio[i][1], vio[j][1], sigma))
    return out


def residual(t_align: Transform, pair: PosePair) -> tuple[Twist, float]:
    """Residual twist log(t_lio * (T * t_vio)^-1) and its squared Mahalanobis norm."""
    twist, _ = _residual_flagged(t_align, pair)
    return twist, mahalanobis_sq(twist, pair.sigma)


def _residual_flagged(t_align: Transform, pair: PosePair):
    disc = compose(pair.t_lio, inverse(compose(t_align, pair.t_vio)))
    return log_se3(disc, return_flag=True)


def residual_jacobian(t_align: Transform, pair: PosePair) -> np.ndarray:
    """6x6 Jacobian of the residual twist w.r.t. a left perturbation of T.

    For r(delta) = log(D exp(-delta)) the derivative at delta = 0 is
    -Jr^-1(log D), with Jr the SE(3) right Jacobian.
    """
    twist, _ = _residual_flagged(t_align, pair)
    return -se3_right_jacobian_inv(twist)


def _sigma_inverses(pairs):
    return [np.linalg.inv(p.sigma) for p in pairs]


def _cost(t_align, pairs, sigma_invs, c):
    total = 0.0
    used = 0
    for pair, s_inv in zip(pairs, sigma_invs):
        twist, near_pi = _residual_flagged(t_align, pair)
        if near_pi:
            continue
        v = twist.vector
        total += cauchy_rho(float(v @ s_inv @ v), c)
        used += 1
    return total, used


def solve_alignment(
    window: AlignmentWindow,
    kernel: RobustKernel = RobustKernel(),
    opts: SolverOptions = SolverOptions(),
) -> AlignmentResult:
    """Minimize the robust alignment cost over the window.

    Initialized from the median-timestamp pair; terminates when the update
    norm drops below opts.tol or after opts.max_iters.  Only steps that
    reduce the cost are accepted, escalating Levenberg damping when a plain
    Gauss-Newton step fails; if no damped step helps, the result is
    returned with converged=False.
    """
    pairs = window.pairs
    if len(pairs) < opts.k_min:
        raise ValueError(f"window has {len(pairs)} pairs, need at least {opts.k_min}")
    c = kernel.c
    sigma_invs = _sigma_inverses(pairs)

    # Initialize from the median-timestamp pair, unless another candidate
    # pair induces a clearly cheaper robust cost (protects against the
    # median itself being a gross outlier, which otherwise strands the
    # reweighted iterations in a single-pair basin).
    k = len(pairs)
    candidates = sorted({k // 2} | {(i * k) // 6 for i in range(1, 6)})
    t_align = None
    cost = math.inf
    for idx in candidates:
        cand = compose(pairs[idx].t_lio, inverse(pairs[idx].t_vio))
        cand_cost, _ = _cost(cand, pairs, sigma_invs, c)
        if cand_cost < cost:
            t_align = cand
            cost = cand_cost

    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iters + 1):
        h = np.zeros((6, 6))
        g = np.zeros(6)
        used = 0
        for pair, s_inv in zip(pairs, sigma_invs):
            twist, near_pi = _residual_flagged(t_align, pair)
            if near_pi:
                continue
            v = twist.vector
            s = float(v @ s_inv @ v)
            w = cauchy_weight(s, c)
            jac = -se3_right_jacobian_inv(twist)
            jt_s = jac.T @ s_inv
            h += w * (jt_s @ jac)
            g += w * (jt_s @ v)
            used += 1
        if used < 3:
            break

        step = None
        new_cost = None
        for lam in (0.0, 1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4, 1e6):
            damped = h + lam * np.diag(np.maximum(np.diag(h), 1e-12))
            try:
                delta = np.linalg.solve(damped, -g)
            except np.linalg.LinAlgError:
                continue
            if not np.isfinite(delta).all():
                continue
            candidate = compose(exp_delta(delta), t_align)
            cand_cost, _ = _cost(candidate, pairs, sigma_invs, c)
            if cand_cost <= cost + 1e-15:
                step = delta
                t_align = candidate
                new_cost = cand_cost
                break
        if step is None:
            return AlignmentResult(t_align, cost, iterations, False, _inliers(t_align, pairs, sigma_invs, c))
        cost = new_cost
        if float(np.linalg.norm(step)) < opts.tol:
            converged = True
            break

    return AlignmentResult(t_align, cost, iterations, converged, _inliers(t_align, pairs, sigma_invs, c))


def exp_delta(delta: np.ndarray) -> Transform:
    from .se3 import exp_se3

    return exp_se3(Twist(delta[:3], delta[3:]))


# 97.5% quantile of chi-square with 6 dof: a correctly-normalized residual
# lands below this with probability 0.975, so the inlier fraction tracks the
# share of pairs consistent with their stated covariance.
INLIER_CHI2 = 14.44937533544792


def _inliers(t_align, pairs, sigma_invs, c) -> float:
    if not pairs:
        return 0.0
    good = 0
    for pair, s_inv in zip(pairs, sigma_invs):
        twist, near_pi = _residual_flagged(t_align, pair)
        if near_pi:
            continue
        v = twist.vector
        if float(v @ s_inv @ v) <= INLIER_CHI2:
            good += 1
    return good / len(pairs)


def alignment_to_json(result: AlignmentResult) -> dict:
    from .formats import quaternion_from_rotation

    q = quaternion_from_rotation(result.t_align.rotation)
    return {
        "t_align": {
            "translation": [float(v) for v in result.t_align.translation],
            "quaternion_xyzw": [float(v) for v in q],
        },
        "final_cost": float(result.final_cost),
        "iterations": int(result.iterations),
        "converged": bool(result.converged),
        "inlier_fraction": float(result.inlier_fraction),
    }
