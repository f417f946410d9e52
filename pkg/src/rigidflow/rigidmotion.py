"""Planar rigid motions in world and local coordinates.

A planar motion is a yaw ``theta`` about the vertical axis plus a ground-plane
translation, expressed about a reference origin: the world origin (the
scanner) or a local origin ``o`` such as a voxel center. The same physical
motion has the same rotation in every frame; only the translation changes::

    t_world = (I - R) o + t_local
    t_local = (R - I) o + t_world
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

WORLD = None


def wrap_angle(theta):
    """Wrap angles into (-pi, pi]; an exact -pi maps to +pi, in-range values pass through untouched."""
    theta = np.asarray(theta, dtype=np.float64)
    inside = (theta > -np.pi) & (theta <= np.pi)
    out = np.where(inside, theta, np.pi - np.mod(np.pi - theta, 2.0 * np.pi))
    return out if out.ndim else float(out)


def rot2(theta) -> np.ndarray:
    """2x2 rotation matrix (or a stack of them for array input)."""
    c = np.cos(theta)
    s = np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def rotz(theta: float) -> np.ndarray:
    R = np.eye(3)
    R[:2, :2] = rot2(theta)
    return R


@dataclass(frozen=True)
class PlanarRigidMotion:
    """Yaw plus 2D translation about ``origin`` (``None`` means the world origin)."""

    theta: float
    t: tuple[float, float]
    origin: tuple[float, float] | None = WORLD

    def __post_init__(self):
        th = float(self.theta)
        tx, ty = (float(v) for v in self.t)
        if not np.isfinite([th, tx, ty]).all():
            raise ValueError(f"non-finite motion component: {th}, {(tx, ty)}")
        object.__setattr__(self, "theta", wrap_angle(th))
        object.__setattr__(self, "t", (tx, ty))
        if self.origin is not None:
            ox, oy = (float(v) for v in self.origin)
            object.__setattr__(self, "origin", (ox, oy))

    @property
    def is_world(self) -> bool:
        return self.origin is None

    @property
    def R(self) -> np.ndarray:
        return rot2(self.theta)

    @property
    def tvec(self) -> np.ndarray:
        return np.array(self.t)

    @classmethod
    def identity(cls) -> "PlanarRigidMotion":
        return cls(0.0, (0.0, 0.0))

    def to_3d(self) -> "RigidMotion3D":
        if not self.is_world:
            return local_to_world(self).to_3d()
        return RigidMotion3D(rotz(self.theta), np.array([self.t[0], self.t[1], 0.0]))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Move points (N, 2) or (N, 3) by a world-frame motion; z is left unchanged."""
        m = self if self.is_world else local_to_world(self)
        pts = np.array(points, dtype=np.float64)
        pts[..., :2] = pts[..., :2] @ m.R.T + m.tvec
        return pts

    def inverse(self) -> "PlanarRigidMotion":
        if not self.is_world:
            raise ValueError("inverse is defined for world-frame motions")
        Rt = self.R.T
        return PlanarRigidMotion(-self.theta, tuple(-(Rt @ self.tvec)))

    def compose(self, other: "PlanarRigidMotion") -> "PlanarRigidMotion":
        """World motion equivalent to applying ``other`` first, then ``self``."""
        if not (self.is_world and other.is_world):
            raise ValueError("compose is defined for world-frame motions")
        t = self.R @ other.tvec + self.tvec
        return PlanarRigidMotion(self.theta + other.theta, tuple(t))


@dataclass(frozen=True)
class RigidMotion3D:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("R is not a proper rotation")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidMotion3D":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def inverse(self) -> "RigidMotion3D":
        return RigidMotion3D(self.R.T, -(self.R.T @ self.t))

    def compose(self, other: "RigidMotion3D") -> "RigidMotion3D":
        return RigidMotion3D(self.R @ other.R, self.R @ other.t + self.t)

    def yaw(self) -> float:
        return float(np.arctan2(self.R[1, 0], self.R[0, 0]))

    def to_planar(self) -> PlanarRigidMotion:
        """Project onto yaw + ground translation (drops roll, pitch and z)."""
        return PlanarRigidMotion(self.yaw(), (self.t[0], self.t[1]))


# ---------------------------------------------------------------------------
# frame conversions
# ---------------------------------------------------------------------------


def local_to_world_t(theta, t_local, origin) -> np.ndarray:
    """Vectorised translation conversion, ``t_W = (I - R) o + t_L``; shapes (..., 2)."""
    R = rot2(np.asarray(theta, dtype=np.float64))
    o = np.asarray(origin, dtype=np.float64)
    return o - np.einsum("...ij,...j->...i", R, o) + np.asarray(t_local, dtype=np.float64)


def world_to_local_t(theta, t_world, origin) -> np.ndarray:
    """Vectorised translation conversion, ``t_L = (R - I) o + t_W``; shapes (..., 2)."""
    R = rot2(np.asarray(theta, dtype=np.float64))
    o = np.asarray(origin, dtype=np.float64)
    return np.einsum("...ij,...j->...i", R, o) - o + np.asarray(t_world, dtype=np.float64)


def local_to_world(m: PlanarRigidMotion) -> PlanarRigidMotion:
    if m.is_world:
        raise ValueError("motion is already expressed in the world frame")
    return PlanarRigidMotion(m.theta, tuple(local_to_world_t(m.theta, m.t, m.origin)))


def world_to_local(m: PlanarRigidMotion, origin) -> PlanarRigidMotion:
    if not m.is_world:
        raise ValueError("world_to_local expects a world-frame motion")
    origin = tuple(float(v) for v in origin)
    return PlanarRigidMotion(m.theta, tuple(world_to_local_t(m.theta, m.t, origin)), origin)


def flow_from_local_motion(p, o, m) -> np.ndarray:
    """Scene flow of point ``p`` under motion ``m`` expressed about origin ``o``.

    ``v = [R (p - o) + t] - (p - o)``. Planar motions act on the first two
    coordinates and give zero vertical flow; :class:`RigidMotion3D` uses
    all three. ``p`` may be a single point or an (N, d) array.
    """
    p = np.asarray(p, dtype=np.float64)
    o = np.asarray(o, dtype=np.float64)
    if isinstance(m, RigidMotion3D):
        d = p[..., :3] - o[..., :3] if o.shape[-1] >= 3 else np.concatenate(
            [p[..., :2] - o, np.zeros(p.shape[:-1] + (1,))], -1
        )
        return d @ m.R.T + m.t - d
    d = p[..., :2] - o[..., :2]
    v2 = _planar_offset_flow(m.theta, m.tvec, d)
    return np.concatenate([v2, np.zeros(v2.shape[:-1] + (1,))], -1)


def _planar_offset_flow(theta, t, d):
    return d @ rot2(theta).T + t - d


# ---------------------------------------------------------------------------
# translation-equivariance checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorldConsistencyReport:
    """Which world-frame motions explain the same flow at two distinct points."""

    consistent_thetas: np.ndarray
    translation: np.ndarray
    thetas: np.ndarray
    residuals: np.ndarray
    delta_o: np.ndarray

    @property
    def only_identity(self) -> bool:
        return len(self.consistent_thetas) == 1 and self.consistent_thetas[0] == 0.0


def world_inconsistency(theta, delta_o) -> np.ndarray:
    """Mismatch ``||(I - R) delta_o||`` of a world motion fitted at one point, seen at the other."""
    theta = np.asarray(theta, dtype=np.float64)
    d = np.asarray(delta_o, dtype=np.float64)
    R = rot2(theta)
    diff = d - np.einsum("...ij,j->...i", R, d)
    return np.linalg.norm(diff, axis=-1)


def world_motions_explaining(p, q, v, thetas=None, tol: float = 1e-12) -> WorldConsistencyReport:
    """Search world motions explaining flow ``v`` at both ``p`` and ``q``.

    For each rotation in ``thetas`` (default: a 1 mrad grid over (-pi, pi],
    plus 0), the translation explaining ``v`` at ``p`` is fixed, and the flow
    it predicts at ``q`` is compared with ``v``. Rotations with residual
    below ``tol`` are reported as consistent; for distinct points this is
    only ``theta = 0`` with ``t = v``.
    """
    p = np.asarray(p, dtype=np.float64)[:2]
    q = np.asarray(q, dtype=np.float64)[:2]
    v = np.asarray(v, dtype=np.float64)[:2]
    if np.array_equal(p, q):
        raise ValueError("world_motions_explaining needs two distinct points")
    if thetas is None:
        thetas = np.union1d(wrap_angle(np.arange(-3141, 3142) * 1e-3), [0.0])
    thetas = np.atleast_1d(np.asarray(thetas, dtype=np.float64))
    R = rot2(thetas)
    # world translation explaining v at p: R p + t - p = v
    t_p = v + p - np.einsum("kij,j->ki", R, p)
    v_q = np.einsum("kij,j->ki", R, q) + t_p - q
    residuals = np.linalg.norm(v_q - v, axis=1)
    ok = residuals <= tol
    return WorldConsistencyReport(
        consistent_thetas=thetas[ok],
        translation=v.copy(),
        thetas=thetas,
        residuals=residuals,
        delta_o=p - q,
    )


def local_flows_match(p, o_a, q, o_b, m: PlanarRigidMotion) -> bool:
    """Flow at ``p`` about ``o_a`` equals flow at ``q`` about ``o_b`` when the offsets match.

    Raises ValueError if ``p - o_a`` and ``q - o_b`` differ in any bit.
    """
    d_a = np.asarray(p, dtype=np.float64)[:2] - np.asarray(o_a, dtype=np.float64)[:2]
    d_b = np.asarray(q, dtype=np.float64)[:2] - np.asarray(o_b, dtype=np.float64)[:2]
    if not np.array_equal(d_a, d_b):
        raise ValueError(f"points do not share local coordinates: {d_a} vs {d_b}")
    v_a = flow_from_local_motion(p, o_a, m)
    v_b = flow_from_local_motion(q, o_b, m)
    return bool(np.array_equal(v_a, v_b))


@dataclass(frozen=True)
class SpreadRow:
    theta: float
    world_spread: float
    world_spread_closed_form: float
    local_spread: float


def _fit_planar(src, dst):
    # Least-squares yaw + translation mapping src onto dst (both (N, 2)).
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    a = src - cs
    b = dst - cd
    theta = np.arctan2((a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]).sum(), (a * b).sum())
    return theta, cd - rot2(theta) @ cs


def _max_pairwise(x):
    diff = x[:, None, :] - x[None, :, :]
    return float(np.sqrt((diff**2).sum(-1)).max())


def stationarity_experiment(
    grid_n: int = 10,
    thetas: Sequence[float] = tuple(np.round(np.arange(1, 11) * 0.1, 10)),
    spacing: float = 1.0,
    t_local=(0.5, -0.25),
    patch=None,
) -> list[SpreadRow]:
    """Target spread of one local motion patch replicated over a ``grid_n`` x ``grid_n`` grid.

    At every grid position ``o`` the same small patch of points (offsets
    ``patch`` around ``o``) is moved by the same local motion. The motion is
    re-estimated from the resulting flow twice: in world coordinates (fit on
    ``o + offsets``) and in local coordinates (fit on the offsets). World
    targets vary with position by ``||(I - R) delta_o||``; local targets are
    bitwise identical whenever ``(o + offsets) - o`` reproduces the offsets
    exactly, as it does for the default dyadic grid and patch.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    if patch is None:
        patch = np.array([[-0.25, -0.25], [0.25, -0.25], [0.25, 0.25], [-0.25, 0.25], [0.0, 0.0]])
    patch = np.asarray(patch, dtype=np.float64)
    ij = np.stack(np.meshgrid(np.arange(grid_n), np.arange(grid_n), indexing="ij"), -1)
    origins = ij.reshape(-1, 2) * float(spacing)
    diag = np.linalg.norm(origins.max(axis=0) - origins.min(axis=0))

    rows = []
    for theta in thetas:
        m = PlanarRigidMotion(theta, t_local, (0.0, 0.0))
        world_t = np.empty_like(origins)
        local_t = np.empty_like(origins)
        for k, o in enumerate(origins):
            pts = o + patch
            flow = flow_from_local_motion(pts, o, m)[:, :2]
            _, world_t[k] = _fit_planar(pts, pts + flow)
            local = pts - o
            _, local_t[k] = _fit_planar(local, local + flow)
        rows.append(
            SpreadRow(
                theta=float(theta),
                world_spread=_max_pairwise(world_t),
                world_spread_closed_form=float(2.0 * np.sin(abs(m.theta) / 2.0) * diag),
                local_spread=_max_pairwise(local_t),
            )
        )
    return rows


def format_spread_table(rows: Sequence[SpreadRow], sep: str = "\t") -> str:
    head = sep.join(["theta", "world_spread", "world_spread_closed_form", "local_spread"])
    body = [
        sep.join(f"{v:.12g}" for v in (r.theta, r.world_spread, r.world_spread_closed_form, r.local_spread))
        for r in rows
    ]
    return "\n".join([head, *body]) + "\n"
