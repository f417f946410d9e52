"""Procedural meshes and scans for tests, demos and the end-to-end smoke run."""

from __future__ import annotations

import numpy as np

from rigidflow.pcio import PointCloud, TriangleMesh

# Outward-facing triangles of the unit box, grouped by face.
_BOX_FACES = {
    "bottom": [(0, 2, 1), (0, 3, 2)],
    "top": [(4, 5, 6), (4, 6, 7)],
    "front": [(1, 2, 6), (1, 6, 5)],
    "back": [(0, 4, 7), (0, 7, 3)],
    "left": [(3, 7, 6), (3, 6, 2)],
    "right": [(0, 1, 5), (0, 5, 4)],
}


def box_mesh(lo, hi, transparent_faces=()) -> TriangleMesh:
    """Axis-aligned box; faces named bottom/top/front(+x)/back/left(+y)/right."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    v = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ])
    tris, clear = [], []
    for name, face in _BOX_FACES.items():
        tris.extend(face)
        clear.extend([name in transparent_faces] * len(face))
    return TriangleMesh(v, np.array(tris, dtype=np.int64), np.array(clear, dtype=bool))


def merge_meshes(meshes) -> TriangleMesh:
    verts, tris, clear = [], [], []
    base = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + base)
        clear.append(m.transparent)
        base += len(m.vertices)
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris), np.concatenate(clear))


def box_car_mesh(length: float = 4.2, width: float = 1.8, height: float = 1.5, glass: bool = True) -> TriangleMesh:
    """Blocky car facing +x: wheels, lower body, cabin with glass sides and an opaque seat block inside."""
    hl, hw = length / 2, width / 2
    clearance = 0.25
    belt = 0.55 * height
    wheel = 0.35
    parts = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            cx, cy = sx * (hl - 0.8), sy * (hw - 0.15)
            parts.append(box_mesh((cx - wheel, cy - 0.12, 0.0), (cx + wheel, cy + 0.12, clearance + 0.1)))
    parts.append(box_mesh((-hl, -hw, clearance), (hl, hw, belt)))
    glass_faces = ("front", "back", "left", "right") if glass else ()
    parts.append(box_mesh((-0.3 * length, -hw + 0.05, belt), (0.2 * length, hw - 0.05, height), glass_faces))
    if glass:
        parts.append(box_mesh((-0.2 * length, -0.35 * width, belt), (0.1 * length, 0.35 * width, belt + 0.35 * height)))
    return merge_meshes(parts)


def street_scene_mesh(
    half_length: float = 60.0,
    road_half_width: float = 12.0,
    ground_z: float = -1.73,
    facade_height: float = 8.0,
    n_posts: int = 6,
    rng_seed: int = 0,
) -> TriangleMesh:
    """Flat ground between two building facades, with a few posts along the kerbs."""
    L, W, g = half_length, road_half_width, ground_z
    ground = TriangleMesh(
        np.array([[-L, -W - 2, g], [L, -W - 2, g], [L, W + 2, g], [-L, W + 2, g]]),
        np.array([[0, 1, 2], [0, 2, 3]]),
        np.zeros(2, dtype=bool),
    )
    parts = [
        ground,
        box_mesh((-L, W, g), (L, W + 1.0, g + facade_height)),
        box_mesh((-L, -W - 1.0, g), (L, -W, g + facade_height)),
    ]
    rng = np.random.default_rng(rng_seed)
    for _ in range(n_posts):
        x = rng.uniform(-0.8 * L, 0.8 * L)
        y = (W - 1.0) * rng.choice([-1.0, 1.0])
        parts.append(box_mesh((x - 0.15, y - 0.15, g), (x + 0.15, y + 0.15, g + 3.0)))
    return merge_meshes(parts)


def synthetic_scan(scene: TriangleMesh | None = None, sensor=None, rng_seed: int = 0, backend=None) -> PointCloud:
    """Simulated scan of ``scene`` (the default street) with random reflectance."""
    from rigidflow.augmentor import SensorModel, raycast_scan

    scene = scene if scene is not None else street_scene_mesh(rng_seed=rng_seed)
    sensor = sensor if sensor is not None else SensorModel(rng_seed=rng_seed)
    empty = PointCloud(np.zeros((0, 3)), np.zeros(0))
    res = raycast_scan([scene], empty, sensor, backend=backend)
    refl = np.random.default_rng(rng_seed).uniform(0.0, 1.0, len(res.cloud))
    return PointCloud(res.cloud.points, refl)
