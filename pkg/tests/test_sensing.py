import numpy as np
import pytest

from harmonic_nav.world import (Circle, Squircle, ForestWorld, beta,
                                boundary_points)
from harmonic_nav.control import Pose
from harmonic_nav.sensing import (SensorModel, PointCloud, Cluster,
                                  ObstacleAdded, ObstacleRefined, scan,
                                  cluster, fit_circle, fit_squircle,
                                  fit_cluster, arc_span, explained,
                                  integrate)
from harmonic_nav.errors import FitDiverged


def disk_world(radius=2.0):
    return ForestWorld(Circle(np.array([0.0, 0.0]), radius,
                              is_workspace_boundary=True))


def test_sensor_model_validation():
    with pytest.raises(ValueError):
        SensorModel(max_range=0.0)
    with pytest.raises(ValueError):
        SensorModel(beams=45)
    assert SensorModel(beams=360).resolution == pytest.approx(np.pi / 180.0)


def test_scan_empty_world_returns_empty_cloud():
    world = disk_world(5.0)
    cloud = scan(world, Pose(np.array([0.0, 0.0]), 0.0), SensorModel())
    assert len(cloud.points) == 0


def test_scan_range_to_circle_dead_ahead():
    world = disk_world()
    world.insert_obstacle(Circle(np.array([0.3, 0.0]), 0.1))
    cloud = scan(world, Pose(np.array([0.0, 0.0]), 0.0), SensorModel())
    ranges = np.linalg.norm(cloud.points - cloud.origin, axis=-1)
    assert np.min(ranges) == pytest.approx(0.2, abs=1e-5)


def test_scan_points_lie_on_true_boundaries(three_obstacles):
    world, _, _ = three_obstacles
    model = SensorModel(max_range=1.5)
    for q in ([0.0, 0.0], [-0.4, 0.2], [0.5, -0.9]):
        cloud = scan(world, Pose(np.array(q), 0.3), model)
        assert len(cloud.points) > 0
        ranges = np.linalg.norm(cloud.points - cloud.origin, axis=-1)
        assert np.all(ranges <= model.max_range + 1e-9)
        shapes = [world.boundary] + [n.shape for n in world.obstacles()]
        dist = np.min(np.abs(np.stack([beta(s, cloud.points)
                                       for s in shapes])), axis=0)
        assert np.max(dist) <= 1e-4


def test_scan_segments_are_collision_free(three_obstacles):
    world, _, _ = three_obstacles
    cloud = scan(world, Pose(np.array([-0.4, 0.2]), 0.0),
                 SensorModel(max_range=1.5))
    ts = np.linspace(0.0, 0.999, 50)[1:]
    for p in cloud.points:
        seg = cloud.origin + ts[:, None] * (p - cloud.origin)
        assert np.all(world.free(seg))


def test_scan_occlusion_hides_far_obstacle():
    world = disk_world(3.0)
    near = Circle(np.array([0.6, 0.0]), 0.2)
    far = Circle(np.array([1.5, 0.0]), 0.2)
    world.insert_obstacle(near)
    world.insert_obstacle(far)
    cloud = scan(world, Pose(np.array([0.0, 0.0]), 0.0),
                 SensorModel(max_range=2.5))
    on_near = np.abs(beta(near, cloud.points)) <= 1e-4
    on_far = np.abs(beta(far, cloud.points)) <= 1e-4
    assert on_near.any()
    assert not on_far.any()
    # oracle: every beam toward the far circle first crosses the near one
    bearing_far = np.arctan2(far.center[1], far.center[0])
    half_width = np.arcsin(far.radius / np.linalg.norm(far.center))
    for ang in np.linspace(bearing_far - half_width,
                           bearing_far + half_width, 9):
        ts = np.linspace(0.0, 2.5, 2000)[1:]
        line = ts[:, None] * np.array([np.cos(ang), np.sin(ang)])[None]
        first_near = np.flatnonzero(beta(near, line) < 0.0)
        first_far = np.flatnonzero(beta(far, line) < 0.0)
        if len(first_far):
            assert len(first_near) and first_near[0] < first_far[0]


def test_cluster_separates_distinct_obstacles():
    right = Circle(np.array([0.8, 0.0]), 0.2)
    left = Circle(np.array([-0.8, 0.3]), 0.2)
    world = disk_world(3.0)
    world.insert_obstacle(right)
    world.insert_obstacle(left)
    cloud = scan(world, Pose(np.array([0.0, 0.0]), 0.0),
                 SensorModel(max_range=1.5))
    parts = cluster(cloud)
    # grazing-limb fragments may split off, but never mix obstacles, and
    # each obstacle keeps one arc big enough to fit
    fittable = {"right": 0, "left": 0}
    for part in parts:
        on_right = (np.abs(beta(right, part.points)) <= 1e-4).all()
        on_left = (np.abs(beta(left, part.points)) <= 1e-4).all()
        assert on_right != on_left
        if len(part.points) >= 6:
            fittable["right" if on_right else "left"] += 1
    assert fittable == {"right": 1, "left": 1}


def test_cluster_merges_across_sweep_seam():
    world = disk_world(3.0)
    world.insert_obstacle(Circle(np.array([0.8, 0.0]), 0.2))
    cloud = scan(world, Pose(np.array([0.0, 0.0]), 0.0),
                 SensorModel(max_range=1.5))
    parts = [p for p in cluster(cloud) if len(p.points) >= 6]
    assert len(parts) == 1
    # the arc straddles the first/last beam of the sweep in one piece
    assert (parts[0].points[:, 1] > 0.0).any()
    assert (parts[0].points[:, 1] < 0.0).any()


def test_cluster_splits_at_sharp_turns():
    # closed sweep around a unit square from its center: continuous
    # range, right-angle turns at the four corners, seam mid-edge
    ang = np.linspace(-np.pi, np.pi, 240, endpoint=False)
    scale = 1.0 / np.maximum(np.abs(np.cos(ang)), np.abs(np.sin(ang)))
    pts = scale[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    parts = cluster(PointCloud(pts, np.array([0.0, 0.0])))
    assert len(parts) == 4
    for part in parts:
        flat = (np.ptp(part.points[:, 0]) < 1e-9
                or np.ptp(part.points[:, 1]) < 1e-9)
        assert flat


def test_circle_fit_recovers_exact_circle():
    truth = Circle(np.array([1.0, 2.0]), 0.5)
    pts = boundary_points(truth, 32)
    got = fit_circle(Cluster(pts))
    assert np.max(np.abs(got.center - truth.center)) <= 1e-9
    assert abs(got.radius - truth.radius) <= 1e-9


def test_circle_fit_needs_six_points():
    pts = boundary_points(Circle(np.array([0.0, 0.0]), 1.0), 5)
    with pytest.raises(FitDiverged):
        fit_circle(Cluster(pts))


def test_squircle_fit_recovers_exact_squircle():
    truth = Squircle(np.array([0.4, -0.2]), np.array([0.5, 0.3]), 0.7)
    pts = boundary_points(truth, 64)
    got = fit_squircle(Cluster(pts))
    assert np.max(np.abs(got.center - truth.center)) <= 1e-6
    assert np.max(np.abs(got.half_widths - truth.half_widths)) <= 1e-6
    assert abs(got.kappa - truth.kappa) <= 1e-6


def test_squircle_fit_needs_twelve_points():
    truth = Squircle(np.array([0.0, 0.0]), np.array([0.5, 0.3]), 0.7)
    pts = boundary_points(truth, 11)
    with pytest.raises(FitDiverged):
        fit_squircle(Cluster(pts))


def test_fit_cluster_prefers_circle_for_round_data():
    truth = Circle(np.array([-0.3, 0.1]), 0.4)
    got = fit_cluster(Cluster(boundary_points(truth, 40)))
    assert isinstance(got, Circle)


def test_fit_cluster_falls_back_to_squircle():
    truth = Squircle(np.array([0.0, 0.0]), np.array([0.6, 0.25]), 0.9)
    got = fit_cluster(Cluster(boundary_points(truth, 64)))
    assert isinstance(got, Squircle)


def test_refit_of_fitted_boundary_is_stable():
    truth = Squircle(np.array([0.2, 0.3]), np.array([0.45, 0.3]), 0.6)
    first = fit_squircle(Cluster(boundary_points(truth, 64)))
    second = fit_squircle(Cluster(boundary_points(first, 64)))
    assert np.max(np.abs(second.center - first.center)) <= 1e-6
    assert np.max(np.abs(second.half_widths - first.half_widths)) <= 1e-6
    assert abs(second.kappa - first.kappa) <= 1e-6


def test_arc_span_fraction_of_circle():
    c = np.array([0.0, 0.0])
    full = boundary_points(Circle(c, 1.0), 64)
    assert arc_span(full, c) == pytest.approx(2.0 * np.pi, abs=0.2)
    ang = np.linspace(0.0, np.pi / 2.0, 16)
    quarter = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    assert arc_span(quarter, c) == pytest.approx(np.pi / 2.0, abs=1e-9)


def test_explained_masks_known_boundaries():
    world = disk_world()
    known = Circle(np.array([0.5, 0.0]), 0.2)
    world.insert_obstacle(known)
    on_known = boundary_points(known, 16)
    novel = boundary_points(Circle(np.array([-0.7, 0.4]), 0.15), 16)
    assert explained(world, on_known).all()
    assert not explained(world, novel).any()


def test_integrate_inserts_then_refines():
    world = disk_world()
    first = Circle(np.array([0.6, 0.2]), 0.18)
    events = integrate(world, [first])
    assert len(events) == 1 and isinstance(events[0], ObstacleAdded)
    assert events[0].relation == "independent"
    node_id = events[0].node_id

    better = Circle(np.array([0.62, 0.21]), 0.2)
    events = integrate(world, [better])
    assert len(events) == 1 and isinstance(events[0], ObstacleRefined)
    assert events[0].node_id == node_id
    assert len(world.obstacles()) == 1
    assert world.nodes[node_id].shape.radius == pytest.approx(0.2)


def test_integrate_marks_attached_obstacle_as_leaf():
    world = disk_world()
    world.insert_obstacle(Squircle(np.array([0.0, 0.5]),
                                   np.array([0.4, 0.2]), 0.8))
    attached = Circle(np.array([0.35, 0.72]), 0.12)
    events = integrate(world, [attached])
    assert isinstance(events[0], ObstacleAdded)
    assert events[0].relation == "leaf"
