"""Hot numeric kernels: ray/triangle queries and plane consensus counting.

Every kernel has two implementations with the same contract:

* a numba path (``@njit``), traversing a bounding-volume hierarchy per ray;
* a pure-numpy path, brute force over ray/triangle blocks.

The public functions dispatch on ``backend`` (``"numba"``, ``"numpy"`` or
``None`` for the process default, see :mod:`rigidflow._accel`). The BVH only
prunes; both paths evaluate the same Moller-Trumbore predicate, so hit sets
agree exactly and hit distances agree to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rigidflow._accel import njit, resolve_backend

# |det| below DET_REL * |e1 x e2| * |d| counts as a ray parallel to the triangle.
DET_REL = 1e-12
# Conservative padding for BVH boxes so pruning never rejects a real hit.
BOX_PAD = 1e-9
LEAF_SIZE = 4
_BLOCK = 1 << 21


@dataclass(frozen=True)
class BVH:
    """Flat axis-aligned bounding-volume hierarchy over a triangle soup."""

    bmin: np.ndarray
    bmax: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.left)


def build_bvh(tris: np.ndarray, leaf_size: int = LEAF_SIZE) -> BVH:
    """Median-split BVH over triangles of shape (T, 3, 3)."""
    tris = np.asarray(tris, dtype=np.float64)
    n = len(tris)
    tmin = tris.min(axis=1)
    tmax = tris.max(axis=1)
    cent = tris.mean(axis=1)
    order = np.arange(n, dtype=np.int64)

    bmin, bmax, left, right, start, count = [], [], [], [], [], []

    def new_node():
        bmin.append(None)
        bmax.append(None)
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(left) - 1

    if n == 0:
        node = new_node()
        bmin[node] = np.full(3, np.inf)
        bmax[node] = np.full(3, -np.inf)
    else:
        root = new_node()
        stack = [(root, 0, n)]
        while stack:
            node, lo, hi = stack.pop()
            idx = order[lo:hi]
            lo_b = tmin[idx].min(axis=0)
            hi_b = tmax[idx].max(axis=0)
            pad = BOX_PAD * (1.0 + np.abs(lo_b).max() + np.abs(hi_b).max())
            bmin[node] = lo_b - pad
            bmax[node] = hi_b + pad
            if hi - lo <= leaf_size:
                start[node] = lo
                count[node] = hi - lo
                continue
            axis = int(np.argmax(cent[idx].max(axis=0) - cent[idx].min(axis=0)))
            srt = idx[np.argsort(cent[idx, axis], kind="stable")]
            order[lo:hi] = srt
            mid = (lo + hi) // 2
            a = new_node()
            b = new_node()
            left[node] = a
            right[node] = b
            stack.append((a, lo, mid))
            stack.append((b, mid, hi))

    return BVH(
        bmin=np.array(bmin, dtype=np.float64).reshape(-1, 3),
        bmax=np.array(bmax, dtype=np.float64).reshape(-1, 3),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        start=np.array(start, dtype=np.int64),
        count=np.array(count, dtype=np.int64),
        order=order,
    )


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@njit
def _mt_scalar(ox, oy, oz, dx, dy, dz, tri):
    e1x = tri[1, 0] - tri[0, 0]
    e1y = tri[1, 1] - tri[0, 1]
    e1z = tri[1, 2] - tri[0, 2]
    e2x = tri[2, 0] - tri[0, 0]
    e2y = tri[2, 1] - tri[0, 1]
    e2z = tri[2, 2] - tri[0, 2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    nx = e1y * e2z - e1z * e2y
    ny = e1z * e2x - e1x * e2z
    nz = e1x * e2y - e1y * e2x
    nlen = np.sqrt(nx * nx + ny * ny + nz * nz)
    dlen = np.sqrt(dx * dx + dy * dy + dz * dz)
    if abs(det) <= DET_REL * nlen * dlen:
        return np.inf
    inv = 1.0 / det
    sx = ox - tri[0, 0]
    sy = oy - tri[0, 1]
    sz = oz - tri[0, 2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf
    return (e2x * qx + e2y * qy + e2z * qz) * inv


@njit
def _slab_enter(ox, oy, oz, dx, dy, dz, lo, hi, tcap):
    # Entry parameter of the ray into [lo, hi], or inf if it misses before tcap.
    t0 = -np.inf
    t1 = tcap
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    for a in range(3):
        if d[a] == 0.0:
            if o[a] < lo[a] or o[a] > hi[a]:
                return np.inf
        else:
            inv = 1.0 / d[a]
            ta = (lo[a] - o[a]) * inv
            tb = (hi[a] - o[a]) * inv
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
            if t0 > t1:
                return np.inf
    return t0


@njit
def _nearest_numba(origins, dirs, tris, bmin, bmax, left, right, start, count,
                   order, tmin, tmax, out_t, out_idx):
    stack = np.empty(128, dtype=np.int64)
    for r in range(origins.shape[0]):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        best = np.inf
        besti = -1
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            cap = best if best < tmax else tmax
            if _slab_enter(ox, oy, oz, dx, dy, dz, bmin[node], bmax[node], cap) == np.inf:
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    ti = order[k]
                    t = _mt_scalar(ox, oy, oz, dx, dy, dz, tris[ti])
                    if t > tmin and t <= tmax:
                        if t < best or (t == best and ti < besti):
                            best = t
                            besti = ti
            else:
                stack[sp] = left[node]
                sp += 1
                stack[sp] = right[node]
                sp += 1
        out_t[r] = best
        out_idx[r] = besti


@njit
def _blocked_numba(origins, ends, tris, bmin, bmax, left, right, start, count,
                   order, tlo, thi, out):
    stack = np.empty(128, dtype=np.int64)
    for r in range(origins.shape[0]):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx = ends[r, 0] - ox
        dy = ends[r, 1] - oy
        dz = ends[r, 2] - oz
        hit = False
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0 and not hit:
            sp -= 1
            node = stack[sp]
            if _slab_enter(ox, oy, oz, dx, dy, dz, bmin[node], bmax[node], thi) == np.inf:
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    t = _mt_scalar(ox, oy, oz, dx, dy, dz, tris[order[k]])
                    if t > tlo and t < thi:
                        hit = True
                        break
            else:
                stack[sp] = left[node]
                sp += 1
                stack[sp] = right[node]
                sp += 1
        out[r] = hit


@njit
def _inlier_counts_numba(points, normals, offsets, thresh, out):
    for h in range(normals.shape[0]):
        nx, ny, nz = normals[h, 0], normals[h, 1], normals[h, 2]
        d = offsets[h]
        c = 0
        for i in range(points.shape[0]):
            r = nx * points[i, 0] + ny * points[i, 1] + nz * points[i, 2] - d
            if abs(r) <= thresh:
                c += 1
        out[h] = c


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _cross(a, b):
    return np.stack(
        [
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ],
        axis=-1,
    )


def _mt_block(o, d, tris):
    """Hit parameters for every (ray, triangle) pair; inf where missed."""
    v0 = tris[None, :, 0, :]
    e1 = tris[None, :, 1, :] - v0
    e2 = tris[None, :, 2, :] - v0
    d = d[:, None, :]
    o = o[:, None, :]
    p = _cross(d, e2)
    det = e1[..., 0] * p[..., 0] + e1[..., 1] * p[..., 1] + e1[..., 2] * p[..., 2]
    n = _cross(e1, e2)
    nlen = np.sqrt(n[..., 0] * n[..., 0] + n[..., 1] * n[..., 1] + n[..., 2] * n[..., 2])
    dlen = np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])
    ok = np.abs(det) > DET_REL * nlen * dlen
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        s = o - v0
        u = (s[..., 0] * p[..., 0] + s[..., 1] * p[..., 1] + s[..., 2] * p[..., 2]) * inv
        ok &= (u >= 0.0) & (u <= 1.0)
        q = _cross(s, e1)
        v = (d[..., 0] * q[..., 0] + d[..., 1] * q[..., 1] + d[..., 2] * q[..., 2]) * inv
        ok &= (v >= 0.0) & (u + v <= 1.0)
        t = (e2[..., 0] * q[..., 0] + e2[..., 1] * q[..., 1] + e2[..., 2] * q[..., 2]) * inv
    return np.where(ok, t, np.inf)


def _root_box_mask(o, d, tris, tcap):
    lo = tris.min(axis=(0, 1))
    hi = tris.max(axis=(0, 1))
    pad = BOX_PAD * (1.0 + np.abs(lo).max() + np.abs(hi).max())
    lo = lo - pad
    hi = hi + pad
    t0 = np.full(len(o), -np.inf)
    t1 = np.full(len(o), float(tcap))
    keep = np.ones(len(o), dtype=bool)
    for a in range(3):
        zero = d[:, a] == 0.0
        keep &= ~(zero & ((o[:, a] < lo[a]) | (o[:, a] > hi[a])))
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d[:, a]
            ta = (lo[a] - o[:, a]) * inv
            tb = (hi[a] - o[:, a]) * inv
        near = np.where(zero, -np.inf, np.minimum(ta, tb))
        far = np.where(zero, np.inf, np.maximum(ta, tb))
        t0 = np.maximum(t0, near)
        t1 = np.minimum(t1, far)
    return keep & (t0 <= t1)


def _chunks(n_rays, n_tris):
    step = max(1, _BLOCK // max(n_tris, 1))
    for lo in range(0, n_rays, step):
        yield lo, min(n_rays, lo + step)


def _nearest_numpy(origins, dirs, tris, tmin, tmax):
    n = len(origins)
    out_t = np.full(n, np.inf)
    out_idx = np.full(n, -1, dtype=np.int64)
    if n == 0 or len(tris) == 0:
        return out_t, out_idx
    cand = np.flatnonzero(_root_box_mask(origins, dirs, tris, tmax))
    for lo, hi in _chunks(len(cand), len(tris)):
        rows = cand[lo:hi]
        t = _mt_block(origins[rows], dirs[rows], tris)
        t = np.where((t > tmin) & (t <= tmax), t, np.inf)
        j = np.argmin(t, axis=1)
        tj = t[np.arange(len(rows)), j]
        hit = np.isfinite(tj)
        out_t[rows[hit]] = tj[hit]
        out_idx[rows[hit]] = j[hit]
    return out_t, out_idx


def _blocked_numpy(origins, ends, tris, tlo, thi):
    n = len(origins)
    out = np.zeros(n, dtype=bool)
    if n == 0 or len(tris) == 0:
        return out
    dirs = ends - origins
    cand = np.flatnonzero(_root_box_mask(origins, dirs, tris, thi))
    for lo, hi in _chunks(len(cand), len(tris)):
        rows = cand[lo:hi]
        t = _mt_block(origins[rows], dirs[rows], tris)
        out[rows] = ((t > tlo) & (t < thi)).any(axis=1)
    return out


def _inlier_counts_numpy(points, normals, offsets, thresh):
    counts = np.empty(len(normals), dtype=np.int64)
    step = max(1, _BLOCK // max(len(points), 1))
    for lo in range(0, len(normals), step):
        hi = min(len(normals), lo + step)
        r = points @ normals[lo:hi].T - offsets[lo:hi]
        counts[lo:hi] = (np.abs(r) <= thresh).sum(axis=0)
    return counts


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _as_rays(origins, dirs):
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    origins = np.asarray(origins, dtype=np.float64)
    if origins.ndim == 1:
        origins = np.broadcast_to(origins, dirs.shape)
    return np.ascontiguousarray(origins).reshape(-1, 3), dirs


def ray_nearest_hit(origins, dirs, tris, tmin=0.0, tmax=np.inf, backend=None, bvh=None):
    """Nearest triangle hit along each ray.

    Args:
        origins: (R, 3) ray origins, or a single (3,) origin shared by all rays.
        dirs: (R, 3) ray directions; hit distances are in units of ``|dir|``.
        tris: (T, 3, 3) triangle vertices.
        tmin, tmax: hits must satisfy ``tmin < t <= tmax``.

    Returns:
        ``(t, idx)``: per-ray hit parameter (inf on miss) and triangle index
        (-1 on miss). Equal-distance hits resolve to the lowest triangle index.
    """
    origins, dirs = _as_rays(origins, dirs)
    tris = np.ascontiguousarray(tris, dtype=np.float64).reshape(-1, 3, 3)
    if resolve_backend(backend) == "numpy":
        return _nearest_numpy(origins, dirs, tris, float(tmin), float(tmax))
    n = len(origins)
    out_t = np.full(n, np.inf)
    out_idx = np.full(n, -1, dtype=np.int64)
    if n == 0 or len(tris) == 0:
        return out_t, out_idx
    b = bvh if bvh is not None else build_bvh(tris)
    _nearest_numba(origins, dirs, tris, b.bmin, b.bmax, b.left, b.right, b.start,
                   b.count, b.order, float(tmin), float(tmax), out_t, out_idx)
    return out_t, out_idx


def segments_blocked(origins, ends, tris, tlo=1e-9, thi=1.0 - 1e-9, backend=None, bvh=None):
    """True where the segment ``origin -> end`` crosses a triangle at ``tlo < t < thi``.

    ``t`` is the fraction of the way from origin to end, so the default window
    excludes hits at the endpoints themselves.
    """
    origins, ends = _as_rays(origins, ends)
    tris = np.ascontiguousarray(tris, dtype=np.float64).reshape(-1, 3, 3)
    if resolve_backend(backend) == "numpy":
        return _blocked_numpy(origins, ends, tris, float(tlo), float(thi))
    out = np.zeros(len(origins), dtype=bool)
    if len(origins) == 0 or len(tris) == 0:
        return out
    b = bvh if bvh is not None else build_bvh(tris)
    _blocked_numba(origins, ends, tris, b.bmin, b.bmax, b.left, b.right, b.start,
                   b.count, b.order, float(tlo), float(thi), out)
    return out


def plane_inlier_counts(points, normals, offsets, thresh, backend=None):
    """Number of points with ``|n_h . x - d_h| <= thresh`` for each hypothesis ``h``."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    normals = np.ascontiguousarray(normals, dtype=np.float64).reshape(-1, 3)
    offsets = np.ascontiguousarray(offsets, dtype=np.float64).reshape(-1)
    if resolve_backend(backend) == "numpy":
        return _inlier_counts_numpy(points, normals, offsets, float(thresh))
    out = np.zeros(len(normals), dtype=np.int64)
    _inlier_counts_numba(points, normals, offsets, float(thresh), out)
    return out
