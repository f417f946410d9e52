import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import distance_to_triangle_plane_and_inside, occluded_by_bruteforce
from rigidflow.augmentor import (
    AugmentConfig,
    DrivableMap,
    GroundPlane,
    PlacementExhausted,
    SensorModel,
    ackermann_sample,
    arc_chord,
    drivable_region,
    load_pair,
    make_pair,
    place_cars,
    pose_mesh,
    ransac_ground,
    raycast_scan,
)
from rigidflow.baselines import fit_rigid
from rigidflow.decoder import ground_intersection_area
from rigidflow.pcio import PointCloud, TriangleMesh
from rigidflow.rigidmotion import PlanarRigidMotion
from rigidflow.synthetic import box_car_mesh, box_mesh, merge_meshes, synthetic_scan

EMPTY = PointCloud(np.zeros((0, 3)))


def plane_with_outliers(seed, n=1000, frac=0.3, half=20.0):
    r = np.random.default_rng(seed)
    n_out = int(frac * n)
    inl = np.column_stack([r.uniform(-half, half, (n - n_out, 2)), np.zeros(n - n_out)])
    out = np.column_stack([r.uniform(-half, half, (n_out, 2)), r.uniform(-5, 5, n_out)])
    return PointCloud(np.vstack([inl, out]))


# --- ground plane ----------------------------------------------------------


def test_ransac_plane_with_outliers():
    for seed in range(10):
        plane = ransac_ground(plane_with_outliers(seed), rng_seed=seed)
        tilt = math.degrees(math.acos(min(1.0, plane.normal[2])))
        assert tilt < 0.5 and abs(plane.offset) < 0.01
        assert np.linalg.norm(plane.normal) == pytest.approx(1.0, abs=1e-12)
        assert (np.abs(plane.height(plane_with_outliers(seed).points[plane.inliers])) <= plane.threshold).all()


def test_ransac_coplanar_and_three_points(rng):
    n = np.array([0.1, -0.2, 1.0])
    n /= np.linalg.norm(n)
    xy = rng.uniform(-5, 5, (200, 2))
    z = (0.7 - n[0] * xy[:, 0] - n[1] * xy[:, 1]) / n[2]
    plane = ransac_ground(PointCloud(np.column_stack([xy, z])))
    assert len(plane.inliers) == 200
    np.testing.assert_allclose(plane.normal, n, atol=1e-10)
    assert plane.offset == pytest.approx(0.7, abs=1e-10)
    tri = np.array([[0.0, 0, 1], [1, 0, 2], [0, 1, 1]])
    plane = ransac_ground(PointCloud(tri))
    np.testing.assert_allclose(np.abs(plane.height(tri)), 0, atol=1e-12)
    assert plane.normal[2] > 0
    with pytest.raises(ValueError):
        ransac_ground(PointCloud(tri[:2]))
    with pytest.raises(ValueError):
        ransac_ground(PointCloud(np.outer(np.arange(5.0), [1, 1, 0])))


def test_ransac_deterministic():
    c = plane_with_outliers(3)
    a, b = ransac_ground(c, rng_seed=9), ransac_ground(c, rng_seed=9)
    assert a.offset == b.offset and (a.normal == b.normal).all()


def test_drivable_region_examples(rng):
    flat = np.column_stack([rng.uniform(0, 10, (4000, 2)), np.zeros(4000)])
    plane = GroundPlane(np.array([0, 0, 1.0]), 0.0, np.arange(4000), 0.05)
    region = drivable_region(PointCloud(flat), plane, cell=1.0)
    assert region.drivable.shape == (10, 10) and region.drivable.all()
    block = np.column_stack([rng.uniform(2, 4, (300, 2)), np.full(300, 1.0)])
    region = drivable_region(PointCloud(np.vstack([flat, block])), plane, cell=1.0)
    assert not region.drivable[2:4, 2:4].any()
    assert region.drivable.sum() == 96
    high = np.column_stack([rng.uniform(6, 7, (50, 2)), np.full(50, 4.0)])  # above the band: overhang
    assert drivable_region(PointCloud(np.vstack([flat, high])), plane, cell=1.0).drivable.all()
    assert drivable_region(EMPTY, plane).drivable.size == 0


# --- motion sampling -------------------------------------------------------


def test_arc_examples():
    theta, t = arc_chord(10.0, 0.0, 0.1)
    assert theta == 0.0 and t.tolist() == [1.0, 0.0]
    theta, t = arc_chord(10.0, 0.1, 0.1)
    assert theta == pytest.approx(0.1, abs=1e-15)
    np.testing.assert_allclose(t, [math.sin(0.1) / 0.1, (1 - math.cos(0.1)) / 0.1], atol=1e-15)


@settings(max_examples=200)
@given(st.floats(0.1, 30), st.floats(-0.3, 0.3).filter(lambda k: abs(k) > 1e-6), st.floats(0.01, 0.5))
def test_chord_length_identity(speed, curvature, dt):
    theta, t = arc_chord(speed, curvature, dt)
    assert np.linalg.norm(t) == pytest.approx(2 * math.sin(abs(theta) / 2) / abs(curvature), rel=1e-9)


def test_ackermann_sample_rotates_into_world():
    m = ackermann_sample((10, 10), (0.1, 0.1), 0.1, 0, yaw=math.pi / 2)
    assert m.theta == pytest.approx(0.1)
    np.testing.assert_allclose(m.t, [-(1 - math.cos(0.1)) / 0.1, math.sin(0.1) / 0.1], atol=1e-12)
    assert ackermann_sample(rng_seed=5) == ackermann_sample(rng_seed=5)
    with pytest.raises(ValueError):
        ackermann_sample(dt=0)


# --- placement -------------------------------------------------------------


def open_region(size=80.0, cell=0.5):
    n = int(size / cell)
    d = np.ones((n, n), dtype=bool)
    return DrivableMap((-size / 2, -size / 2), cell, d, d.copy(), np.zeros_like(d))


def test_place_cars_disjoint_and_deterministic():
    car = box_car_mesh()
    for k in (1, 2, 3):
        cars = place_cars(open_region(), [car], k, rng_seed=k)
        assert len(cars) == k
        for i in range(k):
            for j in range(i + 1, k):
                assert ground_intersection_area(cars[i].box(), cars[j].box()) == 0.0
                assert ground_intersection_area(cars[i].moved().box(), cars[j].moved().box()) == 0.0
        assert cars == place_cars(open_region(), [car], k, rng_seed=k)
    with pytest.raises(ValueError):
        place_cars(open_region(), [car], 4)


def test_place_cars_exhausted_on_one_car_area():
    # A 6 m disc of drivable cells: room for one static car, not two.
    region = open_region(40.0, 0.5)
    centers = (np.argwhere(np.ones(region.shape)) + 0.5) * 0.5 - 20.0
    region.drivable[:] = (np.hypot(centers[:, 0] - 10, centers[:, 1]) < 3.0).reshape(region.shape)
    car = box_car_mesh()
    one = place_cars(region, [car], 1, speed_range=(0, 0), keepout=0.0)
    assert len(one) == 1
    with pytest.raises(PlacementExhausted) as e:
        place_cars(region, [car], 2, speed_range=(0, 0), keepout=0.0, max_attempts=300)
    assert e.value.attempts == 300


# --- ray casting -----------------------------------------------------------


def narrow_sensor(**kw):
    return SensorModel(azimuth_step=math.radians(1.0), elevations=tuple(np.radians(np.linspace(-15, 5, 11))), **kw)


def test_no_meshes_returns_original(rng):
    orig = PointCloud(rng.normal(size=(100, 3)), rng.random(100))
    res = raycast_scan([], orig, SensorModel())
    assert (res.cloud.points == orig.points).all() and len(res.removed) == 0


def test_single_triangle_zero_noise(backend):
    tri = TriangleMesh(np.array([[8.0, -3, -3], [8.0, 3, -3], [8.0, 0, 4]]), np.array([[0, 1, 2]]))
    res = raycast_scan([tri], EMPTY, narrow_sensor().noiseless(), backend=backend)
    assert len(res.cloud) > 0
    np.testing.assert_allclose(res.cloud.points[:, 0], 8.0, atol=1e-9)
    dist, inside = distance_to_triangle_plane_and_inside(res.cloud.points, tri.corners[0])
    assert (dist < 1e-9).all() and inside.all()
    edge_on = TriangleMesh(np.array([[1.0, 0, 0], [9.0, 0, 0], [5.0, 0, 0.0 + 1e-30]]), np.array([[0, 1, 2]]))
    flat = SensorModel(azimuth_step=math.radians(1.0), elevations=(0.0,)).noiseless()
    assert len(raycast_scan([edge_on], EMPTY, flat, backend=backend).cloud) == 0


def test_transparent_faces_give_no_returns(backend):
    glass = box_mesh((5, -2, -2), (7, 2, 2), ("bottom", "top", "front", "back", "left", "right"))
    res = raycast_scan([glass], EMPTY, narrow_sensor().noiseless(), backend=backend)
    assert len(res.cloud) == 0
    car = pose_mesh(box_car_mesh(), (8.0, 0.0), 0.3, -1.0)
    res = raycast_scan([car], EMPTY, narrow_sensor().noiseless(), backend=backend)
    assert len(res.cloud) > 0
    assert not car.transparent[res.return_triangle].any()
    for p, k in zip(res.cloud.points, res.return_triangle):
        dist, inside = distance_to_triangle_plane_and_inside(p[None], car.corners[k])
        assert dist[0] < 1e-9 and inside[0]


def test_occlusion_behind_and_beside():
    wall = box_mesh((5, -1, -1), (5.5, 1, 1))
    orig = PointCloud(np.array([[10.0, 0, 0], [10.0, 5.0, 0], [3.0, 0, 0]]))
    res = raycast_scan([wall], orig, narrow_sensor().noiseless())
    assert res.removed.tolist() == [0] and res.kept.tolist() == [1, 2]


def test_occlusion_matches_bruteforce(backend):
    rng = np.random.default_rng(7)
    cars = [pose_mesh(box_car_mesh(), (rng.uniform(-15, 15), rng.uniform(-15, 15)), rng.uniform(-3, 3), -1.7) for _ in range(3)]
    pts = np.column_stack([rng.uniform(-30, 30, (3000, 2)), rng.uniform(-1.7, 1.0, 3000)])
    res = raycast_scan(cars, PointCloud(pts), narrow_sensor().noiseless(), backend=backend)
    tris = np.concatenate([m.corners[~m.transparent] for m in cars])
    want = occluded_by_bruteforce(np.zeros(3), pts, tris)
    assert want.sum() > 20
    assert np.flatnonzero(want).tolist() == res.removed.tolist()


def test_noise_and_dropout_statistics():
    room = box_mesh((-20, -20, -3), (20, 20, 10))
    sensor = SensorModel(noise_a=0.02, noise_b=0.002, dropout=0.1, rng_seed=4)
    res = raycast_scan([room], EMPTY, sensor)
    z = (res.noisy_range - res.clean_range) / sensor.sigma(res.clean_range)
    assert len(z) > 10**4
    assert abs(z.std() - 1) < 0.1
    assert 1 - len(res.return_ray) / sensor.n_rays == pytest.approx(0.1, abs=0.01)
    band = (res.clean_range > 19.5) & (res.clean_range < 20.5)
    resid = (res.noisy_range - res.clean_range)[band]
    assert abs(resid.std() / float(sensor.sigma(20.0)) - 1) < 0.1


def test_raycast_deterministic_and_seeded():
    car = pose_mesh(box_car_mesh(), (8.0, 1.0), 0.2, -1.0)
    a = raycast_scan([car], EMPTY, narrow_sensor(rng_seed=1))
    b = raycast_scan([car], EMPTY, narrow_sensor(rng_seed=1))
    c = raycast_scan([car], EMPTY, narrow_sensor(rng_seed=2))
    assert (a.cloud.points == b.cloud.points).all()
    assert not np.array_equal(a.noisy_range, c.noisy_range) or len(a.return_ray) != len(c.return_ray)


# --- pairs -----------------------------------------------------------------


@pytest.fixture(scope="module")
def street():
    sensor = SensorModel(azimuth_step=math.radians(0.4), elevations=tuple(np.radians(np.linspace(-24.8, 2, 32))))
    return synthetic_scan(sensor=sensor, rng_seed=0), sensor


def test_make_pair_deterministic_and_roundtrip(street, tmp_path):
    scan, sensor = street
    a = make_pair(scan, [box_car_mesh()], sensor, 3, n_cars=2)
    b = make_pair(scan, [box_car_mesh()], sensor, 3, n_cars=2)
    assert (a.scan_t.points == b.scan_t.points).all() and (a.scan_t1.points == b.scan_t1.points).all()
    assert a.motions == b.motions and len(a.boxes) == 2
    loaded = load_pair(a.save(tmp_path))
    assert loaded.boxes == a.boxes and loaded.motions == a.motions and loaded.ego == a.ego
    np.testing.assert_array_equal(loaded.labels, a.labels)
    np.testing.assert_allclose(loaded.scan_t.points, a.scan_t.points.astype(np.float32), rtol=0)
    np.testing.assert_allclose(loaded.flow, a.flow, atol=1e-5)


def test_static_car_same_returns(street):
    scan, sensor = street
    cfg = AugmentConfig(speed_range=(0.0, 0.0))
    pair = make_pair(scan, [box_car_mesh()], sensor.noiseless(), 1, cfg, n_cars=1)
    ra, rb = pair.raycast_t, pair.raycast_t1
    car_a = ra.return_ray[ra.return_mesh == 0]
    car_b = rb.return_ray[rb.return_mesh == 0]
    assert car_a.tolist() == car_b.tolist()
    np.testing.assert_array_equal(ra.clean_range, rb.clean_range)


def test_translating_car_fit_recovers_motion(street):
    """Returns at t+1 are carried back to frame t through the triangle they hit, then fitted."""
    scan, sensor = street
    sensor = SensorModel(azimuth_step=math.radians(0.2), elevations=sensor.elevations, rng_seed=0)
    cfg = AugmentConfig(speed_range=(10.0, 10.0), curvature_range=(0.0, 0.0))
    for seed in range(2, 8):
        pair = make_pair(scan, [box_car_mesh()], sensor, seed, cfg, n_cars=1)
        car, m = pair.cars[0], pair.motions[0]
        want = np.array([math.cos(car.yaw), math.sin(car.yaw), 0.0])  # 1 m forward along the heading
        np.testing.assert_allclose([*m.t, 0.0], want, atol=1e-12)
        z = float(pair.plane.z_at(car.position)[0])
        mesh_t = pose_mesh(box_car_mesh(), car.position, car.yaw, z)
        nxt = car.moved()
        mesh_t1 = pose_mesh(box_car_mesh(), nxt.position, nxt.yaw, z)
        rb = pair.raycast_t1
        sel = rb.return_mesh == 0
        dst = rb.cloud.points[rb.n_original:][sel]
        tri = rb.return_triangle[sel]
        src = np.empty_like(dst)
        for k in np.unique(tri):
            rows = tri == k
            a1, b1, c1 = mesh_t1.corners[k]
            basis = np.column_stack([b1 - a1, c1 - a1])
            uv = np.linalg.lstsq(basis, (dst[rows] - a1).T, rcond=None)[0]
            a0, b0, c0 = mesh_t.corners[k]
            src[rows] = a0 + (np.column_stack([b0 - a0, c0 - a0]) @ uv).T
        fit = fit_rigid(src, dst)
        sigma = float(sensor.sigma(np.hypot(*car.position)))
        assert np.linalg.norm(fit.t - want) < 2 * sigma
        np.testing.assert_allclose(fit.R, np.eye(3), atol=0.01)


def test_sampled_ego_mode(street):
    scan, sensor = street
    pair = make_pair(scan, [box_car_mesh()], sensor, 5, AugmentConfig(ego_mode="sampled", ego_speed_range=(5, 5)), n_cars=1)
    assert pair.ego_mode == "sampled" and pair.ego != PlanarRigidMotion.identity()
    assert pair.manifest().ego_mode == "sampled"
