"""Classical rigid-motion estimators: SVD point-to-point fitting and ICP."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from rigidflow.pcio import PointCloud
from rigidflow.rigidmotion import PlanarRigidMotion, RigidMotion3D, rot2


class DegenerateError(ValueError):
    """Point configuration does not determine a unique rigid motion."""


def _xyz(pts) -> np.ndarray:
    if isinstance(pts, PointCloud):
        return pts.points
    return np.asarray(pts, dtype=np.float64).reshape(-1, 3)


def fit_rigid(src, dst) -> RigidMotion3D:
    """Least-squares ``R, t`` minimising ``sum ||R s_i + t - d_i||^2``.

    Both sets are centred, the rotation comes from the SVD of their
    cross-covariance with a determinant sign fix against reflections, and
    the translation maps the source centroid onto the target centroid.
    """
    src = _xyz(src)
    dst = _xyz(dst)
    if len(src) != len(dst):
        raise ValueError(f"point counts differ: {len(src)} vs {len(dst)}")
    if len(src) < 3:
        raise DegenerateError("need at least 3 correspondences")
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    a = src - cs
    b = dst - cd
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateError("source points are collinear or coincident")
    H = a.T @ b
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    t = cd - R @ cs
    return RigidMotion3D(R, t)


def rigid_residual(m: RigidMotion3D, src, dst) -> float:
    """Sum of squared distances after applying ``m`` to ``src``."""
    d = m.apply(_xyz(src)) - _xyz(dst)
    return float((d * d).sum())


@dataclass
class ICPResult:
    motion: RigidMotion3D
    iterations: int
    mean_residual: float
    converged: bool
    history: list[float] = field(default_factory=list)


def nearest_neighbors(tree: cKDTree, query: np.ndarray, k_ties: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest neighbour; equidistant candidates (among the ``k_ties`` closest) go to the lowest index."""
    k = min(k_ties, tree.n)
    dist, idx = tree.query(query, k=k)
    if k == 1:
        return dist, idx
    tied = dist == dist[:, :1]
    best = np.where(tied, idx, np.iinfo(np.int64).max).min(axis=1)
    return dist[:, 0], best


def icp(
    src,
    dst,
    max_iter: int = 50,
    tol: float = 1e-8,
    init: RigidMotion3D | None = None,
) -> ICPResult:
    """Point-to-point ICP aligning ``src`` onto ``dst``.

    Each iteration associates every transformed source point with its exact
    nearest target point and refits the full transform with
    :func:`fit_rigid`. Iteration stops once the change in the estimate
    (Frobenius norm of the rotation change plus translation change) drops
    below ``tol``. No trimming or outlier rejection.

    ``history`` holds the mean squared association distance at each
    iteration, the quantity ICP never increases.
    """
    src = _xyz(src)
    dst = _xyz(dst)
    if len(src) == 0 or len(dst) == 0:
        raise ValueError("icp needs non-empty source and target clouds")
    tree = cKDTree(dst)
    cur = init or RigidMotion3D.identity()
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        moved = cur.apply(src)
        dist, nn = nearest_neighbors(tree, moved)
        history.append(float((dist * dist).mean()))
        try:
            new = fit_rigid(src, dst[nn])
        except DegenerateError:
            new = RigidMotion3D(cur.R, cur.t + (dst[nn] - moved).mean(axis=0))
        step = np.linalg.norm(new.R - cur.R) + np.linalg.norm(new.t - cur.t)
        cur = new
        if step < tol:
            converged = True
            break
    final = np.linalg.norm(cur.apply(src) - dst[nearest_neighbors(tree, cur.apply(src))[1]], axis=1)
    return ICPResult(cur, it, float(final.mean()), converged, history)


def fit_planar_from_flow(points, flows, return_residual: bool = False):
    """Least-squares yaw + translation explaining 2D flows at 2D points.

    Minimises ``sum ||R p_i + t - (p_i + v_i)||^2`` in closed form. With
    ``return_residual`` the root-mean-square residual is returned too.
    """
    p = np.asarray(points, dtype=np.float64)[..., :2].reshape(-1, 2)
    v = np.asarray(flows, dtype=np.float64)[..., :2].reshape(-1, 2)
    if len(p) != len(v):
        raise ValueError("points and flows differ in length")
    if len(p) < 2:
        raise DegenerateError("need at least two points")
    q = p + v
    cp = p.mean(axis=0)
    cq = q.mean(axis=0)
    a = p - cp
    b = q - cq
    if not np.any(a):
        raise DegenerateError("all points coincide")
    theta = np.arctan2((a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]).sum(), (a * b).sum())
    R = rot2(theta)
    t = cq - R @ cp
    m = PlanarRigidMotion(theta, tuple(t))
    if not return_residual:
        return m
    r = p @ R.T + t - q
    return m, float(np.sqrt((r * r).sum(axis=1).mean()))
