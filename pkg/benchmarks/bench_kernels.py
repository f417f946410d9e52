"""Time the numba and numpy backends of the geometry kernels on the same inputs.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--rays N] [--cars N]

Each kernel runs once untimed per backend (numba compilation, caches), then
``--repeat`` timed runs; the table shows the best time. Results of the two
backends are checked for agreement before timing.
"""

from __future__ import annotations

import argparse
import math
import time

import numpy as np

from rigidflow import kernels
from rigidflow._accel import HAVE_NUMBA
from rigidflow.augmentor import SensorModel, pose_mesh
from rigidflow.synthetic import box_car_mesh, street_scene_mesh


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def scene(n_cars, rng):
    parts = [street_scene_mesh(rng_seed=0)]
    for _ in range(n_cars):
        pos = (rng.uniform(-30, 30), rng.uniform(-8, 8))
        parts.append(pose_mesh(box_car_mesh(), pos, rng.uniform(-math.pi, math.pi), -1.73))
    return np.concatenate([m.corners[~m.transparent] for m in parts])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--rays", type=int, default=20000, help="rays drawn from the sensor lattice (0 = full lattice)")
    ap.add_argument("--cars", type=int, default=20)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    tris = scene(args.cars, rng)
    dirs = SensorModel().directions()
    if args.rays:
        dirs = dirs[rng.choice(len(dirs), args.rays, replace=False)]
    origin = np.zeros(3)
    ends = np.column_stack([rng.uniform(-50, 50, (len(dirs), 2)), rng.uniform(-1.7, 2.0, len(dirs))])
    pts = np.column_stack([rng.uniform(-40, 40, (100_000, 2)), rng.normal(0, 0.02, 100_000)])
    nrm = rng.normal([0, 0, 1], 0.01, (200, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    off = rng.normal(0, 0.05, 200)
    bvh = kernels.build_bvh(tris)

    cases = {
        "ray_nearest_hit": lambda b: kernels.ray_nearest_hit(origin, dirs, tris, 0.0, 120.0, backend=b,
                                                             bvh=bvh if b == "numba" else None),
        "segments_blocked": lambda b: kernels.segments_blocked(origin, ends, tris, backend=b,
                                                               bvh=bvh if b == "numba" else None),
        "plane_inlier_counts": lambda b: kernels.plane_inlier_counts(pts, nrm, off, 0.05, backend=b),
    }
    print(f"{len(tris)} triangles, {len(dirs)} rays, {len(pts)} plane points")
    print(f"{'kernel':<22}{'numpy (s)':>12}{'numba (s)':>12}{'speedup':>10}")
    for name, run in cases.items():
        a, b = run("numpy"), run("numba")
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            if not np.array_equal(x, y):
                raise SystemExit(f"{name}: backends disagree")
        t_np = best_of(lambda: run("numpy"), args.repeat)
        t_nb = best_of(lambda: run("numba"), args.repeat)
        print(f"{name:<22}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>9.1f}x")
    t_bvh = best_of(lambda: kernels.build_bvh(tris), args.repeat)
    print(f"{'build_bvh':<22}{'':>12}{t_bvh:>12.4f}")


if __name__ == "__main__":
    main()
