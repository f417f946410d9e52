import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import circular_median_bruteforce, lower_median_by_sort, mc_iou, nms_by_enumeration
from rigidflow.decoder import (
    MotionField,
    NoMotionError,
    OrientedBox,
    apparent_motion,
    assign_boxes,
    circular_median,
    ground_iou,
    iou_matrix,
    lower_median,
    nms,
    pool_ego_motion,
    pool_object_motion,
    synthesize_gt,
)
from rigidflow.pcio import PointCloud
from rigidflow.rigidmotion import PlanarRigidMotion, world_to_local
from rigidflow.voxelgrid import GridSpec

GRID = GridSpec(origin=(-20, -20, -3), voxel_size=(0.5, 0.5, 0.5), extents=(80, 80, 12))


def random_box(r, score=None):
    return OrientedBox(
        (r.uniform(-2, 2), r.uniform(-2, 2), 0.0),
        (r.uniform(0.5, 4), r.uniform(0.5, 3), 1.5),
        r.uniform(-math.pi, math.pi),
        r.uniform(0, 1) if score is None else score,
    )


# --- boxes and IoU ----------------------------------------------------------


def test_box_validation_and_corners():
    with pytest.raises(ValueError):
        OrientedBox((0, 0, 0), (0, 1, 1))
    b = OrientedBox((1, 2, 0), (4, 2, 1), math.pi / 2)
    np.testing.assert_allclose(b.corners2d(), [[0, 4], [0, 0], [2, 0], [2, 4]], atol=1e-12)
    assert b.contains_xy([[1, 4], [1, 4.01], [2, 2]]).tolist() == [True, False, True]


def test_iou_identical_and_offset_squares():
    a = OrientedBox((0, 0, 0), (1, 1, 1))
    assert ground_iou(a, a) == 1.0
    assert ground_iou(a, OrientedBox((0.5, 0, 0), (1, 1, 1))) == pytest.approx(1 / 3, abs=1e-12)
    assert ground_iou(a, OrientedBox((5, 0, 0), (1, 1, 1))) == 0.0


def test_iou_rotated_square_against_monte_carlo():
    a = OrientedBox((0, 0, 0), (1, 1, 1))
    b = OrientedBox((0, 0, 0), (1, 1, 1), math.pi / 4)
    # Octagon overlap: the square minus four corner triangles of leg 1 - 1/sqrt2.
    leg = 1 - 1 / math.sqrt(2)
    inter = 1 - 4 * 0.5 * leg * leg / 1
    assert ground_iou(a, b) == pytest.approx(inter / (2 - inter), abs=1e-12)
    assert ground_iou(a, b) == pytest.approx(mc_iou(a, b), abs=1e-3)


def test_iou_matches_monte_carlo_on_random_pairs():
    r = np.random.default_rng(3)
    for k in range(5):
        a, b = random_box(r), random_box(r)
        assert ground_iou(a, b) == pytest.approx(mc_iou(a, b, seed=k), abs=1e-3)


@settings(max_examples=200)
@given(st.integers(0, 10**6))
def test_iou_range_and_symmetry(seed):
    r = np.random.default_rng(seed)
    a, b = random_box(r), random_box(r)
    v = ground_iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(ground_iou(b, a), abs=1e-12)
    assert ground_iou(a, a) == pytest.approx(1.0, abs=1e-12)
    if v > 1 - 1e-12:
        np.testing.assert_allclose(sorted(map(tuple, a.corners2d().round(9))), sorted(map(tuple, b.corners2d().round(9))))


# --- NMS --------------------------------------------------------------------


def test_nms_identical_boxes():
    a = OrientedBox((0, 0, 0), (2, 1, 1), 0.0, 0.9)
    b = OrientedBox((0, 0, 0), (2, 1, 1), 0.0, 0.8)
    assert nms([b, a]) == [a]


def test_nms_disjoint_and_threshold():
    a = OrientedBox((0, 0, 0), (2, 1, 1), 0.0, 0.9)
    b = OrientedBox((10, 0, 0), (2, 1, 1), 0.0, 0.6)
    c = OrientedBox((20, 0, 0), (2, 1, 1), 0.0, 0.4)
    assert nms([a, b, c]) == [a, b]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 7))
def test_nms_matches_enumeration_oracle(seed, n):
    r = np.random.default_rng(seed)
    boxes = [OrientedBox((r.uniform(-1.5, 1.5), r.uniform(-1.5, 1.5), 0), (2, 1, 1), r.uniform(-3, 3), r.uniform(0.3, 1))
             for _ in range(n)]
    iou = iou_matrix(boxes, boxes)
    want = [boxes[i] for i in nms_by_enumeration(boxes, iou, 0.5, 0.3)]
    got = nms(boxes, 0.5, 0.3)
    assert got == want
    for i, a in enumerate(got):
        for b in got[i + 1:]:
            assert ground_iou(a, b) <= 0.3
    assert [b.score for b in got] == sorted((b.score for b in got), reverse=True)


# --- medians ----------------------------------------------------------------


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30))
def test_lower_median_oracle(vals):
    assert lower_median(vals) == lower_median_by_sort(vals)


def test_even_count_takes_lower():
    assert lower_median([4.0, 1.0, 3.0, 2.0]) == 2.0


@settings(max_examples=100)
@given(st.lists(st.floats(-math.pi + 1e-6, math.pi), min_size=1, max_size=15))
def test_circular_median_oracle(vals):
    got = circular_median(vals)
    want = circular_median_bruteforce(vals)
    cost = lambda a: sum(abs((b - a + math.pi) % (2 * math.pi) - math.pi) for b in vals)
    assert cost(got) == pytest.approx(cost(want), abs=1e-9)
    assert got in [float(v) for v in vals]


def test_circular_median_across_wrap():
    assert circular_median([3.1, -3.1, 3.0]) == pytest.approx(3.1)
    with pytest.raises(ValueError):
        circular_median([])


# --- pooling ----------------------------------------------------------------


def _field(cells, motions):
    return MotionField.from_motions(GRID, cells, motions)


def _cells_in(box, grid=GRID):
    ij = np.stack(np.meshgrid(np.arange(80), np.arange(80), indexing="ij"), -1).reshape(-1, 2)
    return ij[box.contains_xy(grid.ground_center(ij))]


def test_pool_uniform_motion_exact():
    box = OrientedBox((1, 1, 0), (4, 2, 1.5), 0.3)
    cells = _cells_in(box)
    m = PlanarRigidMotion(0.123, (0.7, -0.2))
    assert pool_object_motion(_field(cells, [m] * len(cells)), box) == m


def test_pool_ignores_single_outlier():
    box = OrientedBox((0.25, 0.25, 0), (2.5, 0.5, 1), 0.0)
    cells = _cells_in(box)
    assert len(cells) == 5
    motions = [PlanarRigidMotion(0.1, (1.0, 2.0))] * 4 + [PlanarRigidMotion(-2.0, (50.0, -9.0))]
    assert pool_object_motion(_field(cells, motions), box) == motions[0]


def test_pool_even_count_lower_median():
    box = OrientedBox((0.5, 0.25, 0), (1.9, 0.5, 1), 0.0)
    cells = _cells_in(box)
    assert len(cells) == 4
    motions = [PlanarRigidMotion(0.1 * k, (float(k), -float(k))) for k in range(4)]
    got = pool_object_motion(_field(cells, motions), box)
    assert got.t == (1.0, -2.0)  # lower medians of (0,1,2,3) and (-3,-2,-1,0)
    # Angles 0.1 and 0.2 have the same summed deviation.
    assert got.theta in (0.1, 0.2)


def test_pool_empty_box_names_it():
    with pytest.raises(NoMotionError, match="box"):
        pool_object_motion(_field([[0, 0]], [PlanarRigidMotion.identity()]), OrientedBox((10, 10, 0), (1, 1, 1)))


def test_field_rejects_local_entries():
    with pytest.raises(ValueError):
        _field([[0, 0]], [PlanarRigidMotion(0.0, (0, 0), (1, 1))])


def test_pool_ego_examples():
    cells = np.array([[i, j] for i in range(30, 50) for j in range(30, 50)])
    bg = PlanarRigidMotion(0.02, (-0.5, 0.1))
    box = OrientedBox((0, 0, 0), (3, 3, 1))
    inside = box.contains_xy(GRID.ground_center(cells))
    r = np.random.default_rng(0)
    motions = [PlanarRigidMotion(r.uniform(-3, 3), tuple(r.normal(size=2))) if k else bg for k in inside]
    field = _field(cells, motions)
    assert pool_ego_motion(field, [box]).inverse().theta == bg.theta
    np.testing.assert_allclose(pool_ego_motion(field, [box]).inverse().t, bg.t, atol=1e-15)
    uniform = _field(cells, [bg] * len(cells))
    assert pool_ego_motion(uniform, []) == bg.inverse()
    with pytest.raises(NoMotionError):
        pool_ego_motion(_field(np.zeros((0, 2)), []), [])
    big = OrientedBox((0, 0, 0), (100, 100, 1))
    with pytest.raises(NoMotionError):
        pool_ego_motion(uniform, [big])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_pool_order_invariant_and_robust(seed):
    r = np.random.default_rng(seed)
    box = OrientedBox((0, 0, 0), (3, 2, 1), r.uniform(-3, 3))
    cells = _cells_in(box)
    n = len(cells)
    good = PlanarRigidMotion(r.uniform(-3, 3), tuple(r.normal(size=2)))
    n_bad = (n - 1) // 2
    motions = [good] * (n - n_bad) + [PlanarRigidMotion(r.uniform(-3, 3), tuple(r.normal(0, 5, 2))) for _ in range(n_bad)]
    perm = r.permutation(n)
    a = pool_object_motion(_field(cells, motions), box)
    b = pool_object_motion(_field(cells[perm], [motions[k] for k in perm]), box)
    assert a == b == good


# --- ground truth -----------------------------------------------------------


def _scene(r, n=2000):
    return PointCloud(np.column_stack([r.uniform(-15, 15, (n, 2)), r.uniform(-2, 1, n)]))


def test_static_scene_zero_flow(rng):
    gt = synthesize_gt([], PlanarRigidMotion.identity(), _scene(rng), GRID)
    assert not gt.flow.any()
    assert (gt.labels == -1).all()


def test_translating_object_identity_ego(rng):
    cloud = _scene(rng)
    box = OrientedBox((3, 2, 0), (4, 2, 1.5), 0.4)
    m = PlanarRigidMotion(0.0, (1.0, 0.5))
    gt = synthesize_gt([(box, m)], PlanarRigidMotion.identity(), cloud, GRID)
    inside = box.contains_xy(cloud.points[:, :2])
    np.testing.assert_allclose(gt.flow[inside], np.tile([1.0, 0.5, 0.0], (inside.sum(), 1)), atol=1e-14)
    assert not gt.flow[~inside].any()
    np.testing.assert_array_equal(gt.fg_mask, inside)


def test_rotating_ego_static_point():
    cloud = PointCloud([[10.0, 0.0, 0.0]])
    gt = synthesize_gt([], PlanarRigidMotion(0.1, (0.0, 0.0)), cloud, GRID)
    np.testing.assert_allclose(gt.flow[0], [10 * (math.cos(0.1) - 1), -10 * math.sin(0.1), 0.0], atol=1e-14)


def test_ego_convention_static_point_formula(rng):
    ego = PlanarRigidMotion(0.2, (1.0, -0.5))
    pts = _scene(rng, 50)
    gt = synthesize_gt([], ego, pts, GRID)
    R = np.array([[math.cos(0.2), -math.sin(0.2)], [math.sin(0.2), math.cos(0.2)]])
    want = (pts.points[:, :2] - ego.t) @ R - pts.points[:, :2]  # R^T (p - t) - p, row form
    np.testing.assert_allclose(gt.flow[:, :2], want, atol=1e-12)


def test_overlap_goes_to_highest_score():
    a = OrientedBox((0, 0, 0), (2, 2, 1), 0.0, 0.6)
    b = OrientedBox((0.5, 0, 0), (2, 2, 1), 0.0, 0.9)
    labels, warn = assign_boxes([[0.2, 0.0], [-0.9, 0.0], [5, 5]], [a, b])
    assert labels.tolist() == [1, 0, -1]
    assert warn == 1
    cloud = PointCloud([[0.2, 0.0, 0.0]])
    gt = synthesize_gt([(a, PlanarRigidMotion.identity()), (b, PlanarRigidMotion(0, (1, 0)))],
                       PlanarRigidMotion.identity(), cloud, GRID)
    assert gt.n_overlap_warnings == 1 and gt.labels[0] == 1


def test_gt_rejects_local_motions(rng):
    with pytest.raises(ValueError):
        synthesize_gt([(OrientedBox((0, 0, 0), (1, 1, 1)), PlanarRigidMotion(0, (0, 0), (1, 1)))],
                      PlanarRigidMotion.identity(), _scene(rng, 10), GRID)


def test_local_targets_are_world_to_local_of_field(rng):
    cloud = _scene(rng, 500)
    box = OrientedBox((0, 0, 0), (6, 4, 1.5), 0.3)
    ego = PlanarRigidMotion(0.05, (0.3, 0.1))
    gt = synthesize_gt([(box, PlanarRigidMotion(0.1, (1.0, 0.0)))], ego, cloud, GRID)
    for k in range(0, len(gt.field), 17):
        c = GRID.ground_center(gt.field.cells[k])
        ref = world_to_local(gt.field.motion(k), c)
        assert gt.local_targets[k].origin == ref.origin
        np.testing.assert_allclose(gt.local_targets[k].t, ref.t, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.booleans())
def test_gt_then_pooling_recovers_motions(seed, with_ego):
    r = np.random.default_rng(seed)
    cloud = _scene(r, 4000)
    boxes = [OrientedBox((-7, -7, 0), (4, 2, 1.5), r.uniform(-3, 3)), OrientedBox((7, 6, 0), (4.5, 2, 1.5), r.uniform(-3, 3))]
    motions = [PlanarRigidMotion(r.uniform(-0.2, 0.2), tuple(r.uniform(-2, 2, 2))) for _ in boxes]
    ego = PlanarRigidMotion(r.uniform(-0.1, 0.1), tuple(r.uniform(-1, 1, 2))) if with_ego else PlanarRigidMotion.identity()
    gt = synthesize_gt(list(zip(boxes, motions)), ego, cloud, GRID)
    got_ego = pool_ego_motion(gt.field, boxes)
    for b, m in zip(boxes, motions):
        got = pool_object_motion(gt.field, b, ego=got_ego)
        assert pool_object_motion(gt.field, b) == apparent_motion(m, ego)
        if with_ego:
            assert got.theta == pytest.approx(m.theta, abs=1e-12)
            np.testing.assert_allclose(got.t, m.t, atol=1e-12)
        else:
            assert got == m
    if with_ego:
        assert got_ego.theta == pytest.approx(ego.theta, abs=1e-12)
        np.testing.assert_allclose(got_ego.t, ego.t, atol=1e-12)
    else:
        assert got_ego == ego
