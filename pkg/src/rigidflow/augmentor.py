"""Mixed-reality LIDAR augmentation: insert moving virtual cars into a real scan.

Workflow for one pair: fit the ground plane, find the drivable region, place
cars there, ray-cast a new scan that includes them (removing original points
they occlude), advance every car along an Ackermann arc and ray-cast again.
The pair ships with boxes, per-object motion, ego-motion and per-point flow.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from rigidflow import kernels
from rigidflow.decoder import OrientedBox, ground_intersection_area, synthesize_gt
from rigidflow.pcio import (
    ObjectRecord,
    PointCloud,
    SceneManifest,
    TriangleMesh,
    read_flow,
    read_manifest,
    read_velodyne_bin,
    write_flow,
    write_manifest,
    write_velodyne_bin,
)
from rigidflow.rigidmotion import PlanarRigidMotion, local_to_world, rot2, rotz
from rigidflow.voxelgrid import GridSpec

log = logging.getLogger(__name__)


class PlacementExhausted(RuntimeError):
    def __init__(self, attempts: int, placed: int, wanted: int):
        super().__init__(f"placed {placed} of {wanted} cars after {attempts} attempts")
        self.attempts = attempts


# ---------------------------------------------------------------------------
# ground plane and drivable region
# ---------------------------------------------------------------------------


@dataclass
class GroundPlane:
    """Plane ``normal . x = offset`` with upward unit normal."""

    normal: np.ndarray
    offset: float
    inliers: np.ndarray
    threshold: float

    def height(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64).reshape(-1, 3) @ self.normal - self.offset

    def z_at(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        n = self.normal
        return (self.offset - xy @ n[:2]) / n[2]


def _fit_plane_lsq(pts):
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    n = vt[-1]
    return n, float(n @ c)


def _orient_up(n, d):
    if n[2] < 0 or (n[2] == 0 and (n[1] < 0 or (n[1] == 0 and n[0] < 0))):
        return -n, -d
    return n, d


def ransac_ground(
    cloud: PointCloud,
    iters: int = 200,
    inlier_thresh: float = 0.05,
    rng_seed: int = 0,
    refine_rounds: int = 2,
    backend: str | None = None,
) -> GroundPlane:
    """Best-consensus plane from random 3-point hypotheses, refined by least squares."""
    pts = cloud.points
    if len(pts) < 3:
        raise ValueError("ransac_ground needs at least 3 points")
    rng = np.random.default_rng(rng_seed)
    idx = rng.integers(0, len(pts), size=(iters, 3))
    if len(pts) == 3:
        idx[:] = [0, 1, 2]
    a, b, c = pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]]
    nrm = np.cross(b - a, c - a)
    length = np.linalg.norm(nrm, axis=1)
    scale = np.linalg.norm(b - a, axis=1) * np.linalg.norm(c - a, axis=1)
    valid = length > 1e-12 * np.maximum(scale, 1e-300)
    if not valid.any():
        raise ValueError("no non-collinear point triple found")
    nrm = nrm[valid] / length[valid, None]
    off = np.einsum("ij,ij->i", nrm, a[valid])
    counts = kernels.plane_inlier_counts(pts, nrm, off, inlier_thresh, backend=backend)
    best = int(np.argmax(counts))
    n, d = nrm[best], float(off[best])
    inl = np.flatnonzero(np.abs(pts @ n - d) <= inlier_thresh)
    for _ in range(refine_rounds):
        if len(inl) < 3:
            break
        # Refit on the consensus set even if the count drops: a slightly tilted
        # hypothesis can hold a few more band-edge outliers than the true plane.
        n, d = _fit_plane_lsq(pts[inl])
        inl = np.flatnonzero(np.abs(pts @ n - d) <= inlier_thresh)
    n, d = _orient_up(n, d)
    return GroundPlane(np.asarray(n, dtype=np.float64), float(d), inl, float(inlier_thresh))


@dataclass
class DrivableMap:
    """Ground-plane occupancy grid; cell ``(i, j)`` covers ``origin + [i, i+1) * cell``."""

    origin: tuple[float, float]
    cell: float
    drivable: np.ndarray
    ground: np.ndarray
    blocked: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.drivable.shape

    def cell_index(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        return np.floor((xy - np.array(self.origin)) / self.cell).astype(np.int64)

    def contains(self, xy) -> np.ndarray:
        """True where the point lies in a drivable cell."""
        ij = self.cell_index(xy)
        nx, ny = self.drivable.shape
        inside = (ij[:, 0] >= 0) & (ij[:, 0] < nx) & (ij[:, 1] >= 0) & (ij[:, 1] < ny)
        out = np.zeros(len(ij), dtype=bool)
        out[inside] = self.drivable[ij[inside, 0], ij[inside, 1]]
        return out

    def drivable_cells(self) -> np.ndarray:
        return np.argwhere(self.drivable)


def drivable_region(
    cloud: PointCloud,
    plane: GroundPlane,
    cell: float = 0.5,
    obstacle_band: tuple[float, float] = (0.3, 2.5),
) -> DrivableMap:
    """Cells with ground inliers and no point inside the obstacle height band."""
    pts = cloud.points
    if len(pts) == 0:
        empty = np.zeros((0, 0), dtype=bool)
        return DrivableMap((0.0, 0.0), cell, empty, empty.copy(), empty.copy())
    lo = np.floor(pts[:, :2].min(axis=0) / cell) * cell
    ij = np.floor((pts[:, :2] - lo) / cell).astype(np.int64)
    shape = tuple(ij.max(axis=0) + 1)
    h = plane.height(pts)
    ground = np.zeros(shape, dtype=bool)
    blocked = np.zeros(shape, dtype=bool)
    g = np.abs(h) <= plane.threshold
    ground[ij[g, 0], ij[g, 1]] = True
    b = (h >= obstacle_band[0]) & (h <= obstacle_band[1])
    blocked[ij[b, 0], ij[b, 1]] = True
    return DrivableMap((float(lo[0]), float(lo[1])), float(cell), ground & ~blocked, ground, blocked)


# ---------------------------------------------------------------------------
# motion sampling and placement
# ---------------------------------------------------------------------------


def arc_chord(speed: float, curvature: float, dt: float) -> tuple[float, np.ndarray]:
    """Heading change and car-frame displacement after driving an arc for ``dt`` seconds."""
    theta = speed * curvature * dt
    if abs(curvature) < 1e-12:
        return theta, np.array([speed * dt, 0.0])
    return theta, np.array([math.sin(theta) / curvature, (1.0 - math.cos(theta)) / curvature])


def ackermann_sample(
    speed_range=(0.0, 15.0),
    curvature_range=(-0.1, 0.1),
    dt: float = 0.1,
    rng_seed=0,
    yaw: float = 0.0,
    center=None,
) -> PlanarRigidMotion:
    """Draw a constant-speed, constant-curvature motion over one frame interval.

    The car turns by ``speed * curvature * dt`` and its reference point moves
    along the chord of the arc, rotated into the world by ``yaw``. With
    ``center`` the result is expressed about that point; otherwise it is the
    world-frame motion of a car sitting at the origin.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    rng = np.random.default_rng(rng_seed)
    s = float(rng.uniform(*speed_range)) if speed_range[1] > speed_range[0] else float(speed_range[0])
    k = float(rng.uniform(*curvature_range)) if curvature_range[1] > curvature_range[0] else float(curvature_range[0])
    theta, chord = arc_chord(s, k, dt)
    t = rot2(yaw) @ chord
    if center is None:
        return PlanarRigidMotion(theta, tuple(t))
    return PlanarRigidMotion(theta, tuple(t), tuple(center))


def normalize_car_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Shift a car mesh so its footprint is centred on the origin and its lowest point is at z = 0."""
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    shift = -np.array([(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, lo[2]])
    return mesh.transformed(np.eye(3), shift)


def mesh_extent(mesh: TriangleMesh) -> np.ndarray:
    return mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)


@dataclass
class PlacedCar:
    mesh_id: int
    position: tuple[float, float]
    yaw: float
    motion: PlanarRigidMotion
    size: tuple[float, float, float]

    def box(self, ground_z: float = 0.0, score: float = 1.0) -> OrientedBox:
        l, w, h = self.size
        return OrientedBox((*self.position, ground_z + h / 2.0), (l, w, h), self.yaw, score)

    def moved(self) -> "PlacedCar":
        pos = self.motion.apply(np.array([self.position]))[0]
        return PlacedCar(self.mesh_id, (pos[0], pos[1]), self.yaw + self.motion.theta, self.motion, self.size)


def _footprint_samples(length, width, step):
    nx = max(2, int(math.ceil(length / step)) + 1)
    ny = max(2, int(math.ceil(width / step)) + 1)
    gx, gy = np.meshgrid(np.linspace(-length / 2, length / 2, nx), np.linspace(-width / 2, width / 2, ny))
    return np.column_stack([gx.ravel(), gy.ravel()])


def _footprint_ok(region, samples, pos, yaw, keepout):
    xy = samples @ rot2(yaw).T + np.asarray(pos)
    if keepout > 0 and (np.hypot(xy[:, 0], xy[:, 1]) < keepout).any():
        return False
    return bool(region.contains(xy).all())


def place_cars(
    region: DrivableMap,
    meshes: Sequence[TriangleMesh],
    k: int,
    rng_seed: int = 0,
    speed_range=(0.0, 15.0),
    curvature_range=(-0.1, 0.1),
    dt: float = 0.1,
    max_attempts: int = 2000,
    keepout: float = 3.0,
) -> list[PlacedCar]:
    """Rejection-sample ``k`` car poses with footprints inside drivable cells.

    A candidate is rejected if its footprint, before or after its sampled
    motion, leaves the drivable region, comes within ``keepout`` metres of
    the scanner, or overlaps an already placed car.
    """
    if not 1 <= k <= 3:
        raise ValueError("k must be between 1 and 3")
    if not meshes:
        raise ValueError("no car meshes given")
    cells = region.drivable_cells()
    if len(cells) == 0:
        raise ValueError("drivable region is empty")
    rng = np.random.default_rng(rng_seed)
    sizes = [tuple(float(v) for v in mesh_extent(m)) for m in meshes]
    step = region.cell / 2.0
    placed: list[PlacedCar] = []
    attempts = 0
    while len(placed) < k:
        if attempts >= max_attempts:
            raise PlacementExhausted(attempts, len(placed), k)
        attempts += 1
        mid = int(rng.integers(len(meshes)))
        cell = cells[rng.integers(len(cells))]
        pos = np.array(region.origin) + (cell + rng.uniform(0.0, 1.0, 2)) * region.cell
        yaw = float(rng.uniform(-math.pi, math.pi))
        motion_seed = int(rng.integers(2**63 - 1))
        local = ackermann_sample(speed_range, curvature_range, dt, motion_seed, yaw, tuple(pos))
        car = PlacedCar(mid, (float(pos[0]), float(pos[1])), yaw, local_to_world(local), sizes[mid])
        nxt = car.moved()
        samples = _footprint_samples(car.size[0], car.size[1], step)
        if not _footprint_ok(region, samples, car.position, car.yaw, keepout):
            continue
        if not _footprint_ok(region, samples, nxt.position, nxt.yaw, keepout):
            continue
        clash = False
        for other in placed:
            onext = other.moved()
            if (ground_intersection_area(car.box(), other.box()) > 0.0
                    or ground_intersection_area(nxt.box(), onext.box()) > 0.0):
                clash = True
                break
        if not clash:
            placed.append(car)
    return placed


# ---------------------------------------------------------------------------
# sensor simulation
# ---------------------------------------------------------------------------


def _default_elevations():
    return tuple(np.deg2rad(np.linspace(-24.8, 2.0, 64)).tolist())


@dataclass(frozen=True)
class SensorModel:
    """Spinning multi-beam scanner with range-linear Gaussian noise and random dropout."""

    azimuth_step: float = math.radians(0.2)
    elevations: tuple[float, ...] = field(default_factory=_default_elevations)
    noise_a: float = 0.01
    noise_b: float = 0.001
    dropout: float = 0.02
    max_range: float = 120.0
    rng_seed: int = 0
    azimuth_min: float = -math.pi
    azimuth_max: float = math.pi
    return_reflectance: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "elevations", tuple(float(e) for e in self.elevations))
        if self.azimuth_step <= 0 or not self.elevations:
            raise ValueError("azimuth_step must be positive and elevations non-empty")
        if self.noise_a < 0 or self.noise_b < 0:
            raise ValueError("noise coefficients must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")

    @property
    def azimuths(self) -> np.ndarray:
        n = int(round((self.azimuth_max - self.azimuth_min) / self.azimuth_step))
        return self.azimuth_min + np.arange(n) * self.azimuth_step

    @property
    def n_rays(self) -> int:
        return len(self.elevations) * len(self.azimuths)

    def directions(self) -> np.ndarray:
        """Unit ray directions; ray ``e * n_azimuth + a`` uses elevation ``e`` and azimuth ``a``."""
        el = np.asarray(self.elevations)[:, None]
        az = self.azimuths[None, :]
        d = np.stack(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.broadcast_to(np.sin(el), (el.shape[0], az.shape[1]))],
            axis=-1,
        )
        return d.reshape(-1, 3)

    def sigma(self, r) -> np.ndarray:
        return self.noise_a + self.noise_b * np.asarray(r, dtype=np.float64)

    def with_seed(self, seed: int) -> "SensorModel":
        return _replace(self, rng_seed=int(seed))

    def noiseless(self) -> "SensorModel":
        return _replace(self, noise_a=0.0, noise_b=0.0, dropout=0.0)


def _replace(obj, **kw):
    import dataclasses

    return dataclasses.replace(obj, **kw)


@dataclass
class RaycastResult:
    """Augmented scan: surviving original points followed by simulated returns."""

    cloud: PointCloud
    removed: np.ndarray
    kept: np.ndarray
    return_mesh: np.ndarray
    return_triangle: np.ndarray
    return_ray: np.ndarray
    clean_range: np.ndarray
    noisy_range: np.ndarray

    @property
    def n_original(self) -> int:
        return len(self.kept)

    @property
    def labels(self) -> np.ndarray:
        """-1 for original points, else the index of the mesh that produced the return."""
        return np.concatenate([np.full(len(self.kept), -1, dtype=np.int64), self.return_mesh])


def _opaque_soup(meshes):
    tris, owner, local = [], [], []
    for k, m in enumerate(meshes):
        sel = np.flatnonzero(~m.transparent)
        tris.append(m.corners[sel])
        owner.append(np.full(len(sel), k, dtype=np.int64))
        local.append(sel)
    if not tris:
        return np.zeros((0, 3, 3)), np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(tris), np.concatenate(owner), np.concatenate(local)


def raycast_scan(
    meshes: Sequence[TriangleMesh],
    original: PointCloud,
    sensor: SensorModel,
    origin=(0.0, 0.0, 0.0),
    backend: str | None = None,
) -> RaycastResult:
    """Simulate the scanner against posed meshes and merge with an existing scan.

    Every lattice ray takes its nearest opaque hit within ``max_range``;
    transparent triangles are invisible. The clean range is perturbed by
    ``N(0, sigma(r))`` and the return dropped with probability ``dropout``,
    both drawn per lattice ray from ``sensor.rng_seed``. Original points whose
    line of sight crosses an opaque triangle strictly before reaching them are
    removed.
    """
    origin = np.asarray(origin, dtype=np.float64)
    tris, owner, local = _opaque_soup(meshes)
    n_orig = len(original)
    refl = original.reflectance if original.reflectance is not None else np.zeros(n_orig)
    empty_i = np.zeros(0, dtype=np.int64)
    if len(tris) == 0:
        return RaycastResult(
            PointCloud(original.points.copy(), refl.copy(), original.frame_id),
            empty_i, np.arange(n_orig), empty_i, empty_i, empty_i, np.zeros(0), np.zeros(0),
        )
    bvh = kernels.build_bvh(tris) if kernels.resolve_backend(backend) == "numba" else None
    dirs = sensor.directions()
    t, tri = kernels.ray_nearest_hit(origin, dirs, tris, 0.0, sensor.max_range, backend=backend, bvh=bvh)

    rng = np.random.default_rng(sensor.rng_seed)
    z = rng.standard_normal(len(dirs))
    u = rng.random(len(dirs))
    rays = np.flatnonzero(tri >= 0)
    clean = t[rays]
    noisy = clean + sensor.sigma(clean) * z[rays]
    keep = (u[rays] >= sensor.dropout) & (noisy > 0.0)
    rays, clean, noisy = rays[keep], clean[keep], noisy[keep]
    pts = origin + dirs[rays] * noisy[:, None]

    blocked = kernels.segments_blocked(origin, original.points, tris, backend=backend, bvh=bvh)
    kept = np.flatnonzero(~blocked)
    removed = np.flatnonzero(blocked)
    cloud = PointCloud(
        np.concatenate([original.points[kept], pts]),
        np.concatenate([refl[kept], np.full(len(pts), sensor.return_reflectance)]),
        original.frame_id,
    )
    return RaycastResult(cloud, removed, kept, owner[tri[rays]], local[tri[rays]], rays, clean, noisy)


# ---------------------------------------------------------------------------
# pair generation
# ---------------------------------------------------------------------------


@dataclass
class AugmentConfig:
    n_cars: tuple[int, int] = (1, 3)
    speed_range: tuple[float, float] = (0.0, 15.0)
    curvature_range: tuple[float, float] = (-0.1, 0.1)
    dt: float = 0.1
    ego_mode: str = "identity"
    ego_speed_range: tuple[float, float] = (0.0, 10.0)
    ransac_iters: int = 200
    ransac_thresh: float = 0.05
    drivable_cell: float = 0.5
    obstacle_band: tuple[float, float] = (0.3, 2.5)
    keepout: float = 3.0
    max_attempts: int = 2000


@dataclass
class AugmentedScenePair:
    scan_t: PointCloud
    scan_t1: PointCloud
    flow: np.ndarray
    labels: np.ndarray
    boxes: list[OrientedBox]
    motions: list[PlanarRigidMotion]
    ego: PlanarRigidMotion
    ego_mode: str = "identity"
    cars: list[PlacedCar] = field(default_factory=list)
    plane: GroundPlane | None = None
    raycast_t: RaycastResult | None = None
    raycast_t1: RaycastResult | None = None

    @property
    def objects(self) -> list[tuple[OrientedBox, PlanarRigidMotion]]:
        return list(zip(self.boxes, self.motions))

    def manifest(self) -> SceneManifest:
        objs = [
            ObjectRecord(b.center, b.size, b.yaw, m.theta, m.t[0], m.t[1], b.score)
            for b, m in zip(self.boxes, self.motions)
        ]
        extra = {}
        if self.plane is not None:
            extra["ground_plane"] = {"normal": self.plane.normal.tolist(), "offset": self.plane.offset}
        return SceneManifest(
            scan_t="scan_t.bin",
            scan_t1="scan_t1.bin",
            objects=objs,
            ego=(self.ego.theta, self.ego.t[0], self.ego.t[1]),
            ego_mode=self.ego_mode,
            flow="flow.bin",
            extra=extra,
        )

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_velodyne_bin(self.scan_t, out / "scan_t.bin")
        write_velodyne_bin(self.scan_t1, out / "scan_t1.bin")
        write_flow(self.flow, out / "flow.bin")
        path = out / "manifest.json"
        write_manifest(self.manifest(), path)
        return path


def load_pair(manifest_path) -> AugmentedScenePair:
    """Rebuild a pair from a manifest; per-point labels are recovered from the boxes."""
    from rigidflow.decoder import assign_boxes

    m = read_manifest(manifest_path)
    scan_t = read_velodyne_bin(m.resolve(m.scan_t))
    scan_t1 = read_velodyne_bin(m.resolve(m.scan_t1))
    flow = read_flow(m.resolve(m.flow)) if m.flow else np.zeros((len(scan_t), 3))
    if len(flow) != len(scan_t):
        raise ValueError(f"flow has {len(flow)} rows for {len(scan_t)} points")
    boxes = [OrientedBox(o.center, o.size, o.yaw, o.score) for o in m.objects]
    motions = [PlanarRigidMotion(o.theta, (o.tx, o.ty)) for o in m.objects]
    labels, _ = assign_boxes(scan_t.points[:, :2], boxes)
    ego = PlanarRigidMotion(m.ego[0], (m.ego[1], m.ego[2]))
    plane = None
    gp = m.extra.get("ground_plane")
    if gp:
        plane = GroundPlane(np.array(gp["normal"]), float(gp["offset"]), np.zeros(0, np.int64), 0.0)
    return AugmentedScenePair(scan_t, scan_t1, flow, labels, boxes, motions, ego, m.ego_mode, plane=plane)


def pose_mesh(mesh: TriangleMesh, position, yaw: float, ground_z: float) -> TriangleMesh:
    return normalize_car_mesh(mesh).transformed(rotz(yaw), (position[0], position[1], ground_z))


def _to_sensor_t1(mesh: TriangleMesh, ego_inv: PlanarRigidMotion) -> TriangleMesh:
    return TriangleMesh(ego_inv.apply(mesh.vertices), mesh.triangles, mesh.transparent)


def make_pair(
    scan: PointCloud,
    meshes: Sequence[TriangleMesh],
    sensor: SensorModel = SensorModel(),
    rng_seed: int = 0,
    config: AugmentConfig = AugmentConfig(),
    grid: GridSpec | None = None,
    n_cars: int | None = None,
    backend: str | None = None,
) -> AugmentedScenePair:
    """Generate one augmented scan pair with ground truth."""
    rng = np.random.default_rng(rng_seed)
    seeds = rng.integers(0, 2**63 - 1, size=6)
    plane = ransac_ground(scan, config.ransac_iters, config.ransac_thresh, int(seeds[0]), backend=backend)
    region = drivable_region(scan, plane, config.drivable_cell, config.obstacle_band)
    k = n_cars if n_cars is not None else int(rng.integers(config.n_cars[0], config.n_cars[1] + 1))
    cars = place_cars(
        region, meshes, k, int(seeds[1]), config.speed_range, config.curvature_range, config.dt,
        config.max_attempts, config.keepout,
    )
    if config.ego_mode == "identity":
        ego = PlanarRigidMotion.identity()
    elif config.ego_mode == "sampled":
        ego = ackermann_sample(config.ego_speed_range, config.curvature_range, config.dt, int(seeds[2]))
    else:
        raise ValueError(f"unknown ego mode {config.ego_mode!r}")

    ground_z = [float(plane.z_at(c.position)[0]) for c in cars]
    posed_t = [pose_mesh(meshes[c.mesh_id], c.position, c.yaw, z) for c, z in zip(cars, ground_z)]
    moved = [c.moved() for c in cars]
    posed_t1 = [pose_mesh(meshes[c.mesh_id], c.position, c.yaw, z) for c, z in zip(moved, ground_z)]

    res_t = raycast_scan(posed_t, scan, sensor.with_seed(int(seeds[3])), backend=backend)
    ego_inv = ego.inverse()
    background_t1 = PointCloud(ego_inv.apply(scan.points), scan.reflectance, scan.frame_id)
    posed_t1 = [_to_sensor_t1(m, ego_inv) for m in posed_t1]
    res_t1 = raycast_scan(posed_t1, background_t1, sensor.with_seed(int(seeds[4])), backend=backend)

    boxes = [c.box(z) for c, z in zip(cars, ground_z)]
    motions = [c.motion for c in cars]
    # Foreground is defined by box footprint so labels survive a manifest round trip.
    gt = synthesize_gt(list(zip(boxes, motions)), ego, res_t.cloud, grid)
    log.info("pair: %d cars, %d/%d points", len(cars), len(res_t.cloud), len(res_t1.cloud))
    return AugmentedScenePair(
        res_t.cloud, res_t1.cloud, gt.flow, gt.labels, boxes, motions, ego, config.ego_mode, cars, plane,
        res_t, res_t1,
    )
