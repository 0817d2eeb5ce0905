"""Point-to-point ICP between consecutive scans.

Produces the two health signals the degradation detector consumes: the
mean squared residual over gated correspondences (eps_align) and the
anisotropy-based feature count (n_feat).  A third, diagnostic-only signal
(hessian_min_eig) measures how well the local surface geometry constrains
the alignment: raw point-pair residuals cannot see sliding ambiguity, so
the observability test projects each correspondence onto its target
surface normal before accumulating the 6x6 normal-equations matrix.
A featureless corridor then shows a near-zero smallest eigenvalue along
the unconstrained axis even though the residual itself stays small.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometryError
from .se3 import Transform, compose, log_se3, umeyama_align


@dataclass(frozen=True)
class ScanFrame:
    """Timestamped point cloud in the sensor frame."""

    timestamp: float
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("points must be (N, 3)")
        if not np.isfinite(pts).all():
            raise ValueError("scan contains non-finite coordinates")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class IcpParams:
    gate: float = 1.0  # max pairing distance, meters
    max_iterations: int = 30
    tolerance: float = 1e-6  # twist-norm convergence threshold
    knn: int = 10  # neighborhood size for features and normals
    aniso_ratio: float = 25.0  # eigenvalue ratio for edge/plane-like points
    radius_cap: float = 0.5  # k-NN must fit inside this radius to count
    hessian_weight: float = 0.1  # residual scale for observability weighting


@dataclass(frozen=True)
class CorrespondenceSet:
    """Gated nearest-neighbor pairs; each source index appears at most once."""

    source_indices: np.ndarray
    target_indices: np.ndarray
    squared_distances: np.ndarray
    gate: float

    def __len__(self):
        return len(self.source_indices)


@dataclass(frozen=True)
class MatchReport:
    eps_align: float  # mean squared residual over final correspondences, m^2
    n_feat: int
    converged: bool
    iterations: int
    hessian_min_eig: float


class ScanIndex:
    """Nearest-neighbor index returning exactly the exhaustive-search answer.

    Ties (equal distances, e.g. duplicate points) resolve to the lowest
    target index, matching a plain argmin over squared distances.
    """

    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=float)
        if len(points) == 0:
            raise DegenerateGeometryError("cannot index an empty scan")
        self.points = points
        self.tree = cKDTree(points)

    def nearest(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(indices, squared distances) of the nearest target per query row."""
        queries = np.asarray(queries, dtype=float)
        n = len(self.points)
        if n == 1:
            diff = queries - self.points[0]
            return np.zeros(len(queries), dtype=int), (diff * diff).sum(axis=1)
        dist, idx = self.tree.query(queries, k=2)
        out = idx[:, 0].copy()
        tied = dist[:, 0] == dist[:, 1]
        for row in np.nonzero(tied)[0]:
            r = dist[row, 0] * (1.0 + 1e-12) + 1e-300
            cand = np.array(self.tree.query_ball_point(queries[row], r))
            diff = self.points[cand] - queries[row]
            sq = (diff * diff).sum(axis=1)
            out[row] = cand[sq == sq.min()].min()
        diff = self.points[out] - queries
        return out, (diff * diff).sum(axis=1)


def build_index(target: ScanFrame) -> ScanIndex:
    return ScanIndex(target.points)


def find_correspondences(source: ScanFrame, index: ScanIndex, gate: float) -> CorrespondenceSet:
    """One pair per source point whose nearest neighbor lies within the gate."""
    if gate <= 0.0:
        raise ValueError("gate must be positive")
    idx, sq = index.nearest(source.points)
    keep = sq <= gate * gate
    return CorrespondenceSet(
        source_indices=np.nonzero(keep)[0],
        target_indices=idx[keep],
        squared_distances=sq[keep],
        gate=gate,
    )


def _neighborhood_eigs(points: np.ndarray, knn: int, tree: cKDTree | None = None):
    """Eigenvalues/vectors of each point's k-NN covariance (ascending)."""
    if tree is None:
        tree = cKDTree(points)
    dist, idx = tree.query(points, k=knn)
    nbrs = points[idx]  # (N, k, 3)
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / knn
    w, v = np.linalg.eigh(cov)
    return w, v, dist


def extract_feature_count(scan: ScanFrame, params: IcpParams = IcpParams()) -> int:
    """Number of points with edge- or plane-like local structure.

    A point counts when its k nearest neighbors fit within radius_cap and
    the largest covariance eigenvalue is at least aniso_ratio times the
    smallest.  Isotropic blobs and sparse regions contribute nothing.
    """
    if len(scan) == 0:
        raise ValueError("scan is empty")
    if len(scan) < params.knn:
        return 0
    w, _, dist = _neighborhood_eigs(scan.points, params.knn)
    within = dist[:, -1] <= params.radius_cap
    anisotropic = (w[:, 2] >= params.aniso_ratio * w[:, 0]) & (w[:, 2] > 0.0)
    return int(np.count_nonzero(within & anisotropic))


def _target_normals(index: ScanIndex, target_idx: np.ndarray, knn: int, aniso_ratio: float):
    """Unit normals (smallest-eigenvector) at the given target points, plus a
    planarity quality in [0, 1].  Quality reaches zero when the mid/smallest
    eigenvalue ratio falls below aniso_ratio: crease, edge, or noise-dominated
    neighborhoods have unreliable normal directions and must not vouch for
    observability."""
    k = min(knn, len(index.points))
    uniq, inv = np.unique(target_idx, return_inverse=True)
    _, idx = index.tree.query(index.points[uniq], k=k)
    if k == 1:
        idx = idx[:, None]
    nbrs = index.points[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    w, v = np.linalg.eigh(cov)
    quality = 1.0 - aniso_ratio * w[:, 0] / (w[:, 1] + 1e-30)
    return v[:, :, 0][inv], np.clip(quality, 0.0, 1.0)[inv]


def _observability_min_eig(moved_src, sq_dists, normals, quality, weight_scale):
    # project residual directions onto surface normals; weight down pairs
    # with large residuals (sampling outliers) or unreliable normals
    w = quality / (1.0 + sq_dists / (weight_scale * weight_scale))
    g = np.concatenate([normals, np.cross(moved_src, normals)], axis=1)  # (N, 6)
    h = np.einsum("n,ni,nj->ij", w, g, g)
    return float(max(np.linalg.eigvalsh(h)[0], 0.0))


_FAILED = float("inf")


def icp_align(
    source: ScanFrame,
    target: ScanFrame,
    params: IcpParams = IcpParams(),
    initial: Transform | None = None,
) -> tuple[Transform, MatchReport]:
    """Align source onto target; returns the transform mapping source points
    into the target frame plus a MatchReport of health metrics.

    Alternates gated nearest-neighbor pairing with a closed-form rigid
    update until the incremental twist norm drops below params.tolerance.
    Fewer than 3 usable correspondences aborts with eps_align = +inf.
    """
    if len(source) < 10 or len(target) < 10:
        raise ValueError("icp_align needs at least 10 points per scan")
    current = initial if initial is not None else Transform.identity()
    n_feat = extract_feature_count(source, params)
    index = build_index(target)
    gate_sq = params.gate * params.gate

    converged = False
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        moved = source.points @ current.rotation.T + current.translation
        idx, sq = index.nearest(moved)
        keep = sq <= gate_sq
        if np.count_nonzero(keep) < 3:
            return current, MatchReport(_FAILED, n_feat, False, iterations, 0.0)
        try:
            update = umeyama_align(moved[keep], index.points[idx[keep]])
        except DegenerateGeometryError:
            return current, MatchReport(_FAILED, n_feat, False, iterations, 0.0)
        if log_se3(update).norm < params.tolerance:
            converged = True  # update below tolerance: keep current estimate
            break
        current = compose(update, current)

    moved = source.points @ current.rotation.T + current.translation
    idx, sq = index.nearest(moved)
    keep = sq <= gate_sq
    if np.count_nonzero(keep) < 3:
        return current, MatchReport(_FAILED, n_feat, False, iterations, 0.0)
    eps_align = float(sq[keep].mean())
    normals, quality = _target_normals(index, idx[keep], params.knn, params.aniso_ratio)
    min_eig = _observability_min_eig(
        moved[keep], sq[keep], normals, quality, params.hessian_weight
    )
    return current, MatchReport(eps_align, n_feat, converged, iterations, min_eig)
