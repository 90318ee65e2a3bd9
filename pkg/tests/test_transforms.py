import numpy as np
import pytest

from harmonic_nav.world import Circle, Squircle, ForestWorld, beta, \
    boundary_points
from harmonic_nav.transforms import (TransformParams, TransformStack,
                                     smootherstep, smoothstep,
                                     deformation_window, saturated)
from conftest import free_samples


def test_smootherstep_endpoints():
    t = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
    s = smootherstep(t)
    assert s[0] == 0.0 and s[1] == 0.0
    assert s[3] == 1.0 and s[4] == 1.0
    assert 0.0 < s[2] < 1.0


def test_deformation_window_support():
    b = np.array([0.0, 0.4, 0.5, 1.0, 2.0, 3.0])
    w = deformation_window(b, 0.5, 2.0)
    assert np.all(w[:3] == 1.0)
    assert 0.0 < w[3] < 1.0
    assert w[4] == 0.0 and w[5] == 0.0


def test_saturated_identity_below_knee():
    b = np.array([-0.2, 0.0, 0.3, 0.5])
    assert np.allclose(saturated(b), b)
    # monotone and bounded above the knee
    hi = saturated(np.array([0.6, 1.0, 5.0, 100.0]))
    assert np.all(np.diff(hi) > 0.0) and np.all(hi < 1.5001)


def test_params_validation():
    with pytest.raises(ValueError):
        TransformParams(switch_sharpness=0.0)
    with pytest.raises(ValueError):
        TransformParams(potential_cap=0.5)


def test_star_to_sphere_boundary_fidelity(three_obstacles):
    world, goal, _ = three_obstacles
    stack = TransformStack(world, goal)
    for j, node in enumerate(stack.roots):
        ring = boundary_points(node.shape, 400)
        img = stack.stars_to_spheres(ring)
        r = np.linalg.norm(img - node.shape.center, axis=-1)
        assert np.max(np.abs(r - stack.root_rho[j])) <= 1e-6


def test_workspace_boundary_fidelity(three_obstacles):
    world, goal, _ = three_obstacles
    stack = TransformStack(world, goal)
    ring = boundary_points(world.boundary, 400)
    img = stack.stars_to_spheres(ring)
    r = np.linalg.norm(img - stack.q0, axis=-1)
    assert np.max(np.abs(r - stack.rho0)) <= 1e-6


def test_purge_maps_leaf_boundary_to_parent(depth_two_tree):
    world, goal, _ = depth_two_tree
    stack = TransformStack(world, goal)
    leaf = next(n for n in world.obstacles() if n.parent is not None)
    parent = world.nodes[leaf.parent]
    ring = boundary_points(leaf.shape, 600)
    exposed = ring[beta(parent.shape, ring) > 1e-3]
    assert len(exposed) > 50
    img = stack.purge_forest(exposed)
    assert np.max(np.abs(beta(parent.shape, img))) <= 1e-6


def test_jacobian_determinant_sign_constant(three_obstacles, depth_two_tree):
    for world, goal, _ in (three_obstacles, depth_two_tree):
        stack = TransformStack(world, goal)
        pts = free_samples(world, 2000, seed=3, margin=0.02)
        det = stack.map_jacobian_det(pts)
        assert np.all(det > 0.0) or np.all(det < 0.0)


def test_point_potential_harmonic(three_field):
    stack = three_field.stack
    singular = np.vstack([stack.goal_image[None], stack.point_images])
    rng = np.random.default_rng(5)
    y = rng.uniform(-6.0, 6.0, size=(4000, 2)) + stack.goal_image
    far = np.min(np.linalg.norm(y[:, None, :] - singular[None], axis=-1),
                 axis=-1) >= 0.1
    y = y[far]
    h = 5e-5
    e1 = np.array([h, 0.0])
    e2 = np.array([0.0, h])
    lap = (stack.point_potential(y + e1) + stack.point_potential(y - e1)
           + stack.point_potential(y + e2) + stack.point_potential(y - e2)
           - 4.0 * stack.point_potential(y)) / (h * h)
    assert np.max(np.abs(lap)) <= 1e-4


def test_potential_range_and_cap(three_obstacles):
    world, goal, _ = three_obstacles
    stack = TransformStack(world, goal)
    pts = free_samples(world, 500, seed=9)
    vals = stack.potential(pts)
    assert np.all((vals >= 0.0) & (vals <= stack.params.potential_cap))
    # occupied and out-of-workspace points return the cap value
    blocked = np.array([[0.8, -0.6], [0.0, 5.0]])
    assert np.all(stack.potential(blocked) == stack.params.potential_cap)


def test_potential_minimum_at_goal(three_obstacles):
    world, goal, _ = three_obstacles
    stack = TransformStack(world, goal)
    at_goal = stack.potential(goal[None])[0]
    near = stack.potential(goal[None] + [[0.05, 0.02]])[0]
    assert at_goal < 1e-6
    assert near > at_goal


def test_gradient_matches_value_differences(three_obstacles):
    world, goal, _ = three_obstacles
    stack = TransformStack(world, goal)
    pts = free_samples(world, 50, seed=13, margin=0.05)
    _, grad = stack.potential_and_gradient(pts)
    h = 1e-6
    for k, p in enumerate(pts[:10]):
        gx = (stack.potential(p[None] + [[h, 0.0]])[0]
              - stack.potential(p[None] - [[h, 0.0]])[0]) / (2 * h)
        assert gx == pytest.approx(grad[k, 0], rel=1e-3, abs=1e-8)


def test_incremental_extension_matches_rebuild(empty_disk):
    world, goal, _ = empty_disk
    world = world.clone()
    a = world.insert_obstacle(Circle(np.array([0.5, 0.5]), 0.25))
    base = TransformStack(world, goal)
    b = world.insert_obstacle(Squircle(np.array([-0.7, -0.3]),
                                       np.array([0.3, 0.2]), 0.6))
    extended = base.with_obstacle(b)
    rebuilt = TransformStack(world, goal)
    pts = free_samples(world, 300, seed=21)
    assert np.max(np.abs(extended.potential(pts)
                         - rebuilt.potential(pts))) <= 1e-9
