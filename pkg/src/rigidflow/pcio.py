"""Point cloud, mesh, flow and scene-manifest I/O.

Scans use the KITTI Velodyne layout: N records of four little-endian float32
values ``(x, y, z, reflectance)``. Meshes are Wavefront OBJ with an optional
MTL sidecar; a material with opacity ``d < 1`` (or ``Tr > 0``) marks its
triangles transparent.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_SCAN_DTYPE = np.dtype("<f4")
_RECORD = 16


class FormatError(ValueError):
    """Malformed scan, mesh, flow or manifest file."""


@dataclass
class PointCloud:
    """Ordered 3D points with optional per-point reflectance."""

    points: np.ndarray
    reflectance: np.ndarray | None = None
    frame_id: str = "sensor"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.reflectance is not None:
            self.reflectance = np.asarray(self.reflectance, dtype=np.float64).reshape(-1)
            if len(self.reflectance) != len(self.points):
                raise ValueError(
                    f"reflectance has {len(self.reflectance)} entries for {len(self.points)} points"
                )

    def __len__(self) -> int:
        return len(self.points)

    def validate(self) -> None:
        bad = np.flatnonzero(~np.isfinite(self.points).all(axis=1))
        if len(bad):
            raise FormatError(f"non-finite coordinate at point index {bad[0]}")
        if self.reflectance is not None:
            bad = np.flatnonzero(~np.isfinite(self.reflectance))
            if len(bad):
                raise FormatError(f"non-finite reflectance at point index {bad[0]}")

    def subset(self, idx) -> "PointCloud":
        refl = None if self.reflectance is None else self.reflectance[idx]
        return PointCloud(self.points[idx], refl, self.frame_id)


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    transparent: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.transparent is None:
            self.transparent = np.zeros(len(self.triangles), dtype=bool)
        self.transparent = np.asarray(self.transparent, dtype=bool).reshape(-1)
        if len(self.transparent) != len(self.triangles):
            raise ValueError("transparency flags must match triangle count")
        if len(self.triangles) and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise FormatError("triangle index out of range")

    @property
    def corners(self) -> np.ndarray:
        """Triangle vertex coordinates, shape (T, 3, 3)."""
        return self.vertices[self.triangles]

    @property
    def opaque_corners(self) -> np.ndarray:
        return self.corners[~self.transparent]

    def transformed(self, rotation: np.ndarray, translation) -> "TriangleMesh":
        v = self.vertices @ np.asarray(rotation, dtype=np.float64).T + np.asarray(translation)
        return TriangleMesh(v, self.triangles.copy(), self.transparent.copy())


# ---------------------------------------------------------------------------
# scans
# ---------------------------------------------------------------------------


def read_velodyne_bin(path: str | os.PathLike) -> PointCloud:
    """Load a KITTI ``.bin`` scan; point order matches the file."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % _RECORD:
        whole = len(raw) - len(raw) % _RECORD
        raise FormatError(
            f"{path}: truncated record at byte offset {whole} "
            f"(file length {len(raw)} is not a multiple of {_RECORD})"
        )
    data = np.frombuffer(raw, dtype=_SCAN_DTYPE).reshape(-1, 4)
    bad = np.flatnonzero(~np.isfinite(data).all(axis=1))
    if len(bad):
        raise FormatError(f"{path}: non-finite value at point index {bad[0]}")
    return PointCloud(data[:, :3].astype(np.float64), data[:, 3].astype(np.float64))


def write_velodyne_bin(cloud: PointCloud, path: str | os.PathLike) -> None:
    """Write a cloud as float32 records; missing reflectance is written as 0."""
    cloud.validate()
    n = len(cloud)
    rec = np.zeros((n, 4), dtype=_SCAN_DTYPE)
    rec[:, :3] = cloud.points
    if cloud.reflectance is not None:
        rec[:, 3] = cloud.reflectance
    if not np.isfinite(rec).all():
        bad = np.flatnonzero(~np.isfinite(rec).all(axis=1))[0]
        raise FormatError(f"point {bad} overflows float32")
    try:
        Path(path).write_bytes(rec.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write scan to {path}: {exc}") from exc


def read_flow(path: str | os.PathLike) -> np.ndarray:
    """Per-point flow file: N x 3 float32 little-endian."""
    raw = Path(path).read_bytes()
    if len(raw) % 12:
        raise FormatError(f"{path}: length {len(raw)} is not a multiple of 12")
    return np.frombuffer(raw, dtype=_SCAN_DTYPE).reshape(-1, 3).astype(np.float64)


def write_flow(flow: np.ndarray, path: str | os.PathLike) -> None:
    flow = np.asarray(flow, dtype=np.float64).reshape(-1, 3)
    if not np.isfinite(flow).all():
        raise FormatError("flow contains non-finite values")
    Path(path).write_bytes(flow.astype(_SCAN_DTYPE).tobytes())


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------


def _read_mtl(path: Path) -> dict[str, float]:
    opacity: dict[str, float] = {}
    current = None
    for line in path.read_text().splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        key = parts[0]
        if key == "newmtl":
            current = " ".join(parts[1:])
            opacity[current] = 1.0
        elif current is not None and key == "d":
            opacity[current] = float(parts[1])
        elif current is not None and key == "Tr":
            opacity[current] = 1.0 - float(parts[1])
    return opacity


def read_mesh(path: str | os.PathLike) -> TriangleMesh:
    """Load an OBJ mesh, fan-triangulating polygons.

    Transparency comes from ``usemtl`` materials in the ``mtllib`` sidecars:
    opacity below 1.0 flags the face transparent. Zero-area triangles are
    dropped.
    """
    path = Path(path)
    if path.suffix.lower() != ".obj":
        raise FormatError(f"{path}: unsupported mesh format {path.suffix!r} (expected .obj)")
    verts: list[list[float]] = []
    tris: list[tuple[int, int, int]] = []
    flags: list[bool] = []
    opacity: dict[str, float] = {}
    material = None
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        key = parts[0]
        if key == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif key == "mtllib":
            for name in parts[1:]:
                mtl = path.parent / name
                if mtl.exists():
                    opacity.update(_read_mtl(mtl))
        elif key == "usemtl":
            material = " ".join(parts[1:])
        elif key == "f":
            idx = []
            for tok in parts[1:]:
                i = int(tok.split("/")[0])
                i = i - 1 if i > 0 else len(verts) + i
                if not 0 <= i < len(verts):
                    raise FormatError(f"{path}:{lineno}: dangling vertex index {tok}")
                idx.append(i)
            if len(idx) < 3:
                raise FormatError(f"{path}:{lineno}: face with fewer than 3 vertices")
            transparent = opacity.get(material, 1.0) < 1.0
            for k in range(1, len(idx) - 1):
                tris.append((idx[0], idx[k], idx[k + 1]))
                flags.append(transparent)
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    t = np.array(tris, dtype=np.int64).reshape(-1, 3)
    f = np.array(flags, dtype=bool)
    if len(t):
        c = v[t]
        area2 = np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)
        keep = area2 > 0.0
        t, f = t[keep], f[keep]
    return TriangleMesh(v, t, f)


def write_mesh(mesh: TriangleMesh, path: str | os.PathLike, opacity: float = 0.3) -> None:
    """Write an OBJ plus ``.mtl`` sidecar with an ``opaque`` and a ``glass`` material."""
    path = Path(path)
    mtl = path.with_suffix(".mtl")
    mtl.write_text(f"newmtl opaque\nd 1.0\n\nnewmtl glass\nd {opacity}\n")
    lines = [f"mtllib {mtl.name}"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    current = None
    for tri, transparent in zip(mesh.triangles, mesh.transparent):
        name = "glass" if transparent else "opaque"
        if name != current:
            lines.append(f"usemtl {name}")
            current = name
        lines.append("f " + " ".join(str(i + 1) for i in tri))
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


@dataclass
class ObjectRecord:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float
    theta: float
    tx: float
    ty: float
    score: float = 1.0


@dataclass
class SceneManifest:
    """One augmented scan pair and its ground truth; paths are relative to the manifest."""

    scan_t: str
    scan_t1: str
    objects: list[ObjectRecord] = field(default_factory=list)
    ego: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ego_mode: str = "identity"
    flow: str | None = None
    extra: dict = field(default_factory=dict)
    root: Path = field(default=Path("."), compare=False, repr=False)

    def resolve(self, rel: str) -> Path:
        return (self.root / rel).resolve()

    def to_dict(self) -> dict:
        d = {
            "scan_t": self.scan_t,
            "scan_t1": self.scan_t1,
            "objects": [
                {
                    "center": list(map(float, o.center)),
                    "size": list(map(float, o.size)),
                    "yaw": float(o.yaw),
                    "score": float(o.score),
                    "motion": {"theta": float(o.theta), "tx": float(o.tx), "ty": float(o.ty)},
                }
                for o in self.objects
            ],
            "ego": {"theta": float(self.ego[0]), "tx": float(self.ego[1]), "ty": float(self.ego[2])},
            "ego_mode": self.ego_mode,
            "flow_convention": (
                "flow = position at t+1 in sensor frame t+1 minus position at t in sensor frame t; "
                "ego (theta, tx, ty) is the pose of sensor frame t+1 in frame t"
            ),
        }
        if self.flow is not None:
            d["flow"] = self.flow
        if self.extra:
            d["extra"] = self.extra
        return d


def write_manifest(manifest: SceneManifest, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")


def read_manifest(path: str | os.PathLike, check_files: bool = True) -> SceneManifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    try:
        objects = [
            ObjectRecord(
                center=tuple(o["center"]),
                size=tuple(o["size"]),
                yaw=float(o["yaw"]),
                theta=float(o["motion"]["theta"]),
                tx=float(o["motion"]["tx"]),
                ty=float(o["motion"]["ty"]),
                score=float(o.get("score", 1.0)),
            )
            for o in d.get("objects", [])
        ]
        ego = d.get("ego", {"theta": 0.0, "tx": 0.0, "ty": 0.0})
        m = SceneManifest(
            scan_t=d["scan_t"],
            scan_t1=d["scan_t1"],
            objects=objects,
            ego=(float(ego["theta"]), float(ego["tx"]), float(ego["ty"])),
            ego_mode=d.get("ego_mode", "identity"),
            flow=d.get("flow"),
            extra=d.get("extra", {}),
            root=path.parent,
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing or malformed field {exc}") from exc
    if check_files:
        for rel in (m.scan_t, m.scan_t1, m.flow):
            if rel is not None and not m.resolve(rel).exists():
                raise FileNotFoundError(f"{path}: referenced file {rel} does not exist")
    return m
