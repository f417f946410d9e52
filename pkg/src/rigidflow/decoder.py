"""Object and ego motion decoding from a per-cell motion field.

Detections are oriented boxes on the ground plane. Non-maximum suppression
thins them; each survivor's motion is the median of the world-frame motions
of the occupied ground cells whose centers fall in its footprint. The
background (cells outside every box) gives the ego-motion.

Ego convention: ego ``(theta, t)`` is the pose of sensor frame t+1 expressed
in frame t, so a static point ``p`` observed at t has flow
``R(theta)^T (p - t) - p``. The motion field stores each cell's *apparent*
motion, i.e. the map from its frame-t position to its frame-t+1 sensor
coordinates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from rigidflow.pcio import PointCloud
from rigidflow.rigidmotion import PlanarRigidMotion, rot2, world_to_local_t, wrap_angle
from rigidflow.voxelgrid import GridSpec, occupied_ground_cells, voxelize

log = logging.getLogger(__name__)


class NoMotionError(ValueError):
    """A footprint or background region contains no occupied cell."""


@dataclass(frozen=True)
class OrientedBox:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float = 0.0
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        if len(self.center) != 3 or len(self.size) != 3:
            raise ValueError("center and size need 3 components")
        if min(self.size) <= 0:
            raise ValueError(f"box size must be positive, got {self.size}")
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        object.__setattr__(self, "score", float(self.score))

    def corners2d(self) -> np.ndarray:
        """Footprint corners, counter-clockwise, shape (4, 2)."""
        hl, hw = self.size[0] / 2.0, self.size[1] / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        return local @ rot2(self.yaw).T + np.array(self.center[:2])

    def contains_xy(self, xy) -> np.ndarray:
        """Boolean mask of points whose ground projection is inside the footprint (edges included)."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        d = (xy - np.array(self.center[:2])) @ rot2(self.yaw)
        return (np.abs(d[:, 0]) <= self.size[0] / 2.0) & (np.abs(d[:, 1]) <= self.size[1] / 2.0)

    @property
    def area(self) -> float:
        return self.size[0] * self.size[1]


# ---------------------------------------------------------------------------
# ground-plane IoU
# ---------------------------------------------------------------------------


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of a polygon by a counter-clockwise convex polygon."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for k in range(n):
        if not out:
            break
        a = clip[k]
        b = clip[(k + 1) % n]
        ex, ey = b[0] - a[0], b[1] - a[1]

        def side(p):
            return ex * (p[1] - a[1]) - ey * (p[0] - a[0])

        inp = out
        out = []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(_cross_point(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_cross_point(prev, cur, sp, sc))
            prev, sp = cur, sc
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def _cross_point(p, q, sp, sq):
    w = sp / (sp - sq)
    return (p[0] + w * (q[0] - p[0]), p[1] + w * (q[1] - p[1]))


def ground_intersection_area(a: OrientedBox, b: OrientedBox) -> float:
    return polygon_area(clip_convex(a.corners2d(), b.corners2d()))


def ground_iou(a: OrientedBox, b: OrientedBox) -> float:
    """Intersection over union of the two box footprints in the ground plane."""
    inter = ground_intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def iou_matrix(boxes_a: Sequence[OrientedBox], boxes_b: Sequence[OrientedBox]) -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = ground_iou(a, b)
    return out


def nms(boxes: Sequence[OrientedBox], score_thresh: float = 0.5, overlap_thresh: float = 0.1) -> list[OrientedBox]:
    """Greedy non-maximum suppression in the ground plane.

    Boxes scoring below ``score_thresh`` are removed; the rest are visited by
    descending score (ties keep input order) and a box is suppressed if its
    IoU with an already kept box exceeds ``overlap_thresh``.
    """
    cand = [b for b in boxes if b.score >= score_thresh]
    order = sorted(range(len(cand)), key=lambda i: -cand[i].score)
    kept: list[OrientedBox] = []
    for i in order:
        b = cand[i]
        if all(ground_iou(b, k) <= overlap_thresh for k in kept):
            kept.append(b)
    return kept


# ---------------------------------------------------------------------------
# median pooling
# ---------------------------------------------------------------------------


@dataclass
class MotionField:
    """World-frame planar motion for each occupied ground cell."""

    spec: GridSpec
    cells: np.ndarray
    theta: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.int64).reshape(-1, 2)
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1, 2)
        if not (len(self.cells) == len(self.theta) == len(self.t)):
            raise ValueError("cells, theta and t must have equal length")

    def __len__(self) -> int:
        return len(self.cells)

    @classmethod
    def from_motions(cls, spec: GridSpec, cells, motions: Sequence[PlanarRigidMotion]) -> "MotionField":
        if any(not m.is_world for m in motions):
            raise ValueError("motion field entries must be world-frame motions")
        return cls(
            spec,
            cells,
            [m.theta for m in motions],
            np.array([m.t for m in motions]).reshape(-1, 2),
        )

    def motion(self, k: int) -> PlanarRigidMotion:
        return PlanarRigidMotion(self.theta[k], tuple(self.t[k]))

    def centers(self) -> np.ndarray:
        return self.spec.ground_center(self.cells)

    def copy(self) -> "MotionField":
        return MotionField(self.spec, self.cells.copy(), self.theta.copy(), self.t.copy())


def lower_median(values) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    return float(v[(len(v) - 1) // 2])


def circular_median(angles) -> float:
    """Observed angle minimising the summed absolute wrapped deviation.

    Angles are sorted first so the result does not depend on input order;
    ties go to the smallest angle.
    """
    a = np.sort(wrap_angle(np.asarray(angles, dtype=np.float64).reshape(-1)))
    if len(a) == 0:
        raise ValueError("circular median of an empty set")
    dev = np.abs(wrap_angle(a[None, :] - a[:, None])).sum(axis=1)
    return float(a[int(np.argmin(dev))])


def pool_motion(theta, t) -> PlanarRigidMotion:
    t = np.asarray(t, dtype=np.float64).reshape(-1, 2)
    return PlanarRigidMotion(circular_median(theta), (lower_median(t[:, 0]), lower_median(t[:, 1])))


def pool_object_motion(
    field: MotionField,
    box: OrientedBox,
    grid: GridSpec | None = None,
    ego: PlanarRigidMotion | None = None,
) -> PlanarRigidMotion:
    """Median motion over occupied cells whose centers lie in the box footprint.

    Without ``ego`` this is the pooled field value (the apparent motion).
    With ``ego`` the sensor motion is composed back in, giving the object's
    motion in frame t.
    """
    spec = grid or field.spec
    inside = box.contains_xy(spec.ground_center(field.cells))
    if not inside.any():
        raise NoMotionError(f"no occupied cell inside box at {box.center[:2]} (yaw {box.yaw:.3f})")
    pooled = pool_motion(field.theta[inside], field.t[inside])
    return pooled if ego is None else ego.compose(pooled)


def background_mask(field: MotionField, boxes: Sequence[OrientedBox], grid: GridSpec | None = None) -> np.ndarray:
    spec = grid or field.spec
    centers = spec.ground_center(field.cells)
    bg = np.ones(len(field), dtype=bool)
    for b in boxes:
        bg &= ~b.contains_xy(centers)
    return bg


def pool_ego_motion(field: MotionField, boxes: Sequence[OrientedBox], grid: GridSpec | None = None) -> PlanarRigidMotion:
    """Ego pose of frame t+1 in frame t from the background cells.

    Background cells carry the apparent motion of static structure, which is
    the inverse of the ego pose; the pooled median is inverted.
    """
    bg = background_mask(field, boxes, grid)
    if not bg.any():
        raise NoMotionError("no background cell outside the given boxes")
    return pool_motion(field.theta[bg], field.t[bg]).inverse()


# ---------------------------------------------------------------------------
# ground-truth synthesis
# ---------------------------------------------------------------------------


@dataclass
class GroundTruth:
    flow: np.ndarray
    labels: np.ndarray
    field: MotionField
    local_targets: list[PlanarRigidMotion]
    n_overlap_warnings: int = 0

    @property
    def fg_mask(self) -> np.ndarray:
        return self.labels >= 0


def apparent_motion(obj: PlanarRigidMotion | None, ego: PlanarRigidMotion) -> PlanarRigidMotion:
    """Map from a frame-t position to frame-t+1 sensor coordinates."""
    inv_ego = ego.inverse()
    return inv_ego if obj is None else inv_ego.compose(obj)


def assign_boxes(xy, boxes: Sequence[OrientedBox]) -> tuple[np.ndarray, int]:
    """Index of the highest-scoring box containing each point (-1 if none) and the overlap count."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    labels = np.full(len(xy), -1, dtype=np.int64)
    best = np.full(len(xy), -np.inf)
    hits = np.zeros(len(xy), dtype=np.int64)
    for k, b in enumerate(boxes):
        inside = b.contains_xy(xy)
        hits += inside
        take = inside & (b.score > best)
        labels[take] = k
        best[take] = b.score
    return labels, int((hits > 1).sum())


def synthesize_gt(
    objects: Sequence[tuple[OrientedBox, PlanarRigidMotion]],
    ego: PlanarRigidMotion,
    cloud: PointCloud,
    grid: GridSpec | None = None,
    labels: np.ndarray | None = None,
) -> GroundTruth:
    """Per-point flow and per-cell motion targets for a scan with moving objects.

    Points inside an object's footprint (or labelled with its index via
    ``labels``) move with that object; all others are static and only see
    the ego-motion. A point inside several boxes goes to the highest-scoring
    one and is counted in ``n_overlap_warnings``. Cell targets follow the
    cell center: the world-frame apparent motion in ``field`` and the same
    motion re-expressed about each cell center in ``local_targets``.
    """
    grid = grid or GridSpec()
    boxes = [b for b, _ in objects]
    motions = [m for _, m in objects]
    if not ego.is_world or any(not m.is_world for m in motions):
        raise ValueError("object and ego motions must be world-frame")
    apparent = [apparent_motion(m, ego) for m in motions]
    background = apparent_motion(None, ego)

    pts = cloud.points
    n_warn = 0
    if labels is None:
        labels, n_warn = assign_boxes(pts[:, :2], boxes)
        if n_warn:
            log.warning("%d points fall inside more than one box", n_warn)
    labels = np.asarray(labels, dtype=np.int64)

    flow = np.zeros((len(pts), 3))
    for k in range(-1, len(boxes)):
        sel = labels == k
        if sel.any():
            m = background if k < 0 else apparent[k]
            flow[sel] = m.apply(pts[sel]) - pts[sel]

    cells = occupied_ground_cells(voxelize(cloud, grid))
    cell_labels, _ = assign_boxes(grid.ground_center(cells), boxes)
    cell_motions = [background if k < 0 else apparent[k] for k in cell_labels]
    field = MotionField.from_motions(grid, cells, cell_motions)
    centers = grid.ground_center(cells)
    t_local = world_to_local_t(field.theta, field.t, centers)
    local = [PlanarRigidMotion(th, tuple(t), tuple(c)) for th, t, c in zip(field.theta, t_local, centers)]
    return GroundTruth(flow, labels, field, local, n_warn)
