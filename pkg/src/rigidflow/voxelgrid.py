"""Sparse voxel partitioning with fixed per-voxel statistics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rigidflow.pcio import PointCloud

FEATURE_LEN = 7


@dataclass(frozen=True)
class GridSpec:
    """Regular grid: voxel ``(i, j, k)`` spans ``[origin + idx*size, origin + (idx+1)*size)``.

    The default covers 80 m x 80 m around the scanner with the vertical
    resolution split into 10 slabs.
    """

    origin: tuple[float, float, float] = (-40.0, -40.0, -3.0)
    voxel_size: tuple[float, float, float] = (0.2, 0.2, 0.4)
    extents: tuple[int, int, int] = (400, 400, 10)
    sample_cap: int = 35
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "voxel_size", tuple(float(v) for v in self.voxel_size))
        object.__setattr__(self, "extents", tuple(int(v) for v in self.extents))
        if len(self.origin) != 3 or len(self.voxel_size) != 3 or len(self.extents) != 3:
            raise ValueError("origin, voxel_size and extents must have 3 components")
        if min(self.voxel_size) <= 0:
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        if min(self.extents) < 1:
            raise ValueError(f"extents must be positive, got {self.extents}")
        if self.sample_cap < 1:
            raise ValueError("sample_cap must be at least 1")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")

    def voxel_index(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.floor((p - np.array(self.origin)) / np.array(self.voxel_size)).astype(np.int64)

    def voxel_center(self, index) -> np.ndarray:
        idx = np.asarray(index, dtype=np.float64)
        return np.array(self.origin) + (idx + 0.5) * np.array(self.voxel_size)

    def ground_center(self, ij) -> np.ndarray:
        """XY center of ground cell(s) ``(i, j)``."""
        ij = np.asarray(ij, dtype=np.float64)
        return np.array(self.origin[:2]) + (ij + 0.5) * np.array(self.voxel_size[:2])

    def ground_index(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        return np.floor((xy - np.array(self.origin[:2])) / np.array(self.voxel_size[:2])).astype(np.int64)


@dataclass
class SparseVoxelGrid:
    """Occupied voxels only.

    ``indices[c]`` is the voxel of cell ``c``; its retained point indices are
    ``members[offsets[c]:offsets[c + 1]]`` and its feature is ``features[c]``.
    Cells are ordered lexicographically by ``(i, j, k)``.
    """

    spec: GridSpec
    indices: np.ndarray
    features: np.ndarray
    members: np.ndarray
    offsets: np.ndarray
    n_points: int
    n_dropped: int
    n_discarded: int
    _lookup: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._lookup = {tuple(int(v) for v in ijk): c for c, ijk in enumerate(self.indices)}

    def __len__(self) -> int:
        return len(self.indices)

    def __contains__(self, ijk) -> bool:
        return tuple(ijk) in self._lookup

    def cell_points(self, ijk) -> np.ndarray:
        c = self._lookup[tuple(ijk)]
        return self.members[self.offsets[c]:self.offsets[c + 1]]

    def cell_feature(self, ijk) -> np.ndarray:
        return self.features[self._lookup[tuple(ijk)]]

    def cells(self) -> dict:
        """``{(i, j, k): (point_indices, feature)}``."""
        return {
            tuple(int(v) for v in ijk): (self.members[self.offsets[c]:self.offsets[c + 1]], self.features[c])
            for c, ijk in enumerate(self.indices)
        }

    @property
    def n_retained(self) -> int:
        return len(self.members)


def encode_cell(points, spec: GridSpec, index=None, reflectance=None) -> np.ndarray:
    """Fixed 7-value descriptor of the points in one voxel.

    ``[occupancy, min(count / T, 1), centroid - voxel center (3 values),
    mean distance to centroid, mean reflectance]``. ``index`` defaults to the
    voxel holding the first point; missing reflectance counts as 0.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise ValueError("encode_cell needs at least one point")
    if index is None:
        index = spec.voxel_index(p[:1])[0]
    centroid = p.mean(axis=0)
    feat = np.empty(FEATURE_LEN)
    feat[0] = 1.0
    feat[1] = min(len(p) / spec.sample_cap, 1.0)
    feat[2:5] = centroid - spec.voxel_center(index)
    feat[5] = np.linalg.norm(p - centroid, axis=1).mean()
    feat[6] = 0.0 if reflectance is None else float(np.mean(reflectance))
    return feat


def _sample_rng(spec: GridSpec, ijk) -> np.random.Generator:
    # Keyed on the cell, not on processing order.
    return np.random.default_rng([spec.rng_seed, int(ijk[0]), int(ijk[1]), int(ijk[2])])


def _encode_sorted(p, refl, offsets, cells, spec: GridSpec) -> np.ndarray:
    """Vectorised :func:`encode_cell` over contiguous per-cell point runs."""
    n_cells = len(offsets) - 1
    feats = np.empty((n_cells, FEATURE_LEN))
    if n_cells == 0:
        return feats
    counts = np.diff(offsets)
    starts = offsets[:-1]
    centroid = np.add.reduceat(p, starts, axis=0) / counts[:, None]
    cell_of = np.repeat(np.arange(n_cells), counts)
    spread = np.linalg.norm(p - centroid[cell_of], axis=1)
    feats[:, 0] = 1.0
    feats[:, 1] = np.minimum(counts / spec.sample_cap, 1.0)
    feats[:, 2:5] = centroid - spec.voxel_center(cells)
    feats[:, 5] = np.add.reduceat(spread, starts) / counts
    feats[:, 6] = 0.0 if refl is None else np.add.reduceat(refl, starts) / counts
    return feats


def voxelize(cloud: PointCloud, spec: GridSpec) -> SparseVoxelGrid:
    """Group points by voxel, cap each voxel at ``spec.sample_cap`` random points, encode.

    Points outside the grid are dropped (``n_dropped``); points beyond the
    cap are discarded (``n_discarded``).
    """
    pts = cloud.points
    n = len(pts)
    ext = np.array(spec.extents)
    idx = spec.voxel_index(pts) if n else np.zeros((0, 3), dtype=np.int64)
    inb = np.flatnonzero(((idx >= 0) & (idx < ext)).all(axis=1))
    n_dropped = n - len(inb)
    idx_in = idx[inb]
    key = (idx_in[:, 0] * ext[1] + idx_in[:, 1]) * ext[2] + idx_in[:, 2]
    order = np.argsort(key, kind="stable")
    key_sorted = key[order]
    pts_sorted = inb[order]
    starts = np.flatnonzero(np.r_[True, key_sorted[1:] != key_sorted[:-1]]) if len(key) else np.zeros(0, int)
    ends = np.r_[starts[1:], len(key_sorted)]

    cells = idx_in[order][starts] if len(starts) else np.zeros((0, 3), dtype=np.int64)
    retain = np.ones(len(pts_sorted), dtype=bool)
    n_discarded = 0
    for c in np.flatnonzero(ends - starts > spec.sample_cap):
        a, b = starts[c], ends[c]
        pick = _sample_rng(spec, cells[c]).choice(b - a, spec.sample_cap, replace=False)
        n_discarded += int(b - a) - spec.sample_cap
        retain[a:b] = False
        retain[a + pick] = True
    # Within a cell, members stay in ascending point order.
    kept = pts_sorted[retain]
    cell_of = np.repeat(np.arange(len(starts)), ends - starts)[retain]
    counts = np.bincount(cell_of, minlength=len(starts))
    offsets = np.r_[0, np.cumsum(counts)].astype(np.int64)
    features = _encode_sorted(pts[kept], None if cloud.reflectance is None else cloud.reflectance[kept],
                              offsets, cells, spec)

    return SparseVoxelGrid(
        spec=spec,
        indices=cells.astype(np.int64),
        features=features,
        members=kept.astype(np.int64),
        offsets=offsets,
        n_points=n,
        n_dropped=int(n_dropped),
        n_discarded=int(n_discarded),
    )


def flatten_to_ground(grid: SparseVoxelGrid) -> dict[tuple[int, int], np.ndarray]:
    """Stack each vertical column of voxel features into one ground-cell vector.

    Slab ``k`` occupies entries ``[7k, 7k + 7)``; empty slabs are zero.
    """
    depth = grid.spec.extents[2]
    out: dict[tuple[int, int], np.ndarray] = {}
    for (i, j, k), feat in zip(grid.indices, grid.features):
        key = (int(i), int(j))
        col = out.get(key)
        if col is None:
            col = out[key] = np.zeros(depth * FEATURE_LEN)
        col[k * FEATURE_LEN:(k + 1) * FEATURE_LEN] = feat
    return out


def occupied_ground_cells(grid: SparseVoxelGrid) -> np.ndarray:
    """Sorted unique ``(i, j)`` of ground cells with at least one occupied voxel."""
    if len(grid) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(grid.indices[:, :2], axis=0)
