import dataclasses

import numpy as np
import pytest

from harmonic_nav.world import Circle, ForestWorld
from harmonic_nav.transforms import TransformStack
from harmonic_nav.oriented import OrientedField, wrap_angle, _sign
from harmonic_nav.errors import AtGoal
from conftest import free_samples


def rotation_matrices(field, pts):
    """Two-step rotation assembled column by column."""
    values, grads = field.stack.potential_and_gradient(pts)
    t1, t2 = field.rotation_angles(pts, values, grads)
    n = len(pts)
    e1 = np.tile([1.0, 0.0], (n, 1))
    e2 = np.tile([0.0, 1.0], (n, 1))
    c1 = field._rotate(field._rotate(e1, t2), t1)
    c2 = field._rotate(field._rotate(e2, t2), t1)
    return np.stack([c1, c2], axis=-1)


def test_wrap_angle_range_and_congruence():
    rng = np.random.default_rng(0)
    theta = rng.uniform(-20.0, 20.0, 1000)
    w = wrap_angle(theta)
    assert np.all(w > -np.pi) and np.all(w <= np.pi)
    res = np.mod(w - theta, 2.0 * np.pi)
    assert np.max(np.minimum(res, 2.0 * np.pi - res)) <= 1e-9
    assert np.array_equal(wrap_angle(w), w)


def test_wrap_angle_half_turn_lands_positive():
    assert wrap_angle(np.pi) == pytest.approx(np.pi, abs=1e-15)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi, abs=1e-15)
    assert wrap_angle(3.0 * np.pi) == pytest.approx(np.pi, abs=1e-12)
    assert wrap_angle(0.0) == 0.0


def test_sign_of_zero_is_positive():
    assert _sign(np.array([0.0]))[0] == 1.0
    assert _sign(np.array([-0.0]))[0] == 1.0
    assert _sign(np.array([-3.0]))[0] == -1.0
    assert _sign(np.array([2.0]))[0] == 1.0


def test_switch_one_at_potential_floor(three_field):
    assert three_field.switch(np.array([0.0]))[0] == pytest.approx(1.0,
                                                                   abs=1e-15)


def test_switch_zero_at_cap(three_field):
    cap = three_field.stack.params.potential_cap
    assert three_field.switch(np.array([cap]))[0] == 0.0
    assert three_field.switch(np.array([cap - 1e-12]))[0] == 0.0


def test_switch_midpoint_value(three_field):
    half = dataclasses.replace(three_field, dipole_sharpness=0.5)
    got = half.switch(np.array([0.5]))[0]
    assert got == pytest.approx(np.exp(-1.5), abs=1e-12)


def test_rotation_is_identity_where_switch_vanishes(three_field):
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1.0, 1.0, size=(64, 2))
    grads = rng.normal(size=(64, 2))
    t1, t2 = three_field._angles(pts, grads, np.zeros(64))
    out = three_field._rotate(three_field._rotate(grads, t2), t1)
    assert np.max(np.abs(out - grads)) <= 1e-12


def test_rotation_orthonormal_unit_determinant(three_field, three_obstacles):
    world, goal, _ = three_obstacles
    pts = free_samples(world, 200, seed=2, keep_out=goal, radius=0.05)
    gam = rotation_matrices(three_field, pts)
    gram = np.einsum("nij,nik->njk", gam, gam)
    assert np.max(np.abs(gram - np.eye(2))) <= 1e-12
    det = gam[:, 0, 0] * gam[:, 1, 1] - gam[:, 0, 1] * gam[:, 1, 0]
    assert np.max(np.abs(det - 1.0)) <= 1e-12


def test_identity_at_workspace_boundary(three_field, three_obstacles):
    world, _, _ = three_obstacles
    bound = world.boundary
    from harmonic_nav.world import boundary_points
    ring = boundary_points(bound, 256)
    inset = bound.center + (ring - bound.center) * (1.0 - 1e-3)
    gam = rotation_matrices(three_field, inset)
    frob = np.sqrt(np.sum((gam - np.eye(2)) ** 2, axis=(1, 2)))
    assert np.max(frob) <= 1e-6

    vals, grads = three_field.stack.potential_and_gradient(inset)
    ups = three_field.upsilon(inset)
    assert np.max(np.abs(ups + grads)) <= 1e-9


@pytest.mark.parametrize("fixture", ["three_field", "tree_field"])
def test_field_norm_matches_gradient_norm(fixture, request):
    field = request.getfixturevalue(fixture)
    world = field.stack.world
    pts = free_samples(world, 500, seed=3, keep_out=field.goal, radius=0.05)
    _, grads = field.stack.potential_and_gradient(pts)
    ups = field.upsilon(pts)
    diff = np.linalg.norm(ups, axis=-1) - np.linalg.norm(grads, axis=-1)
    assert np.max(np.abs(diff)) <= 1e-12


def test_at_goal_raises(three_field):
    with pytest.raises(AtGoal):
        three_field.upsilon(three_field.goal)


def test_rear_axis_field_points_at_goal():
    world = ForestWorld(Circle(np.array([0.0, 0.0]), 2.0,
                               is_workspace_boundary=True))
    goal = np.array([0.8, 0.0])
    field = OrientedField(TransformStack(world, goal), goal_heading=0.0)
    q = np.array([[-1.5, 0.0]])
    # oracle for the gradient line: the world is mirror symmetric about
    # the x axis, so the cross-axis derivative vanishes, and the value
    # falls toward the goal along the axis
    h = 1e-5
    up = field.stack.potential(q + [[0.0, h]])[0]
    dn = field.stack.potential(q - [[0.0, h]])[0]
    fwd = field.stack.potential(q + [[h, 0.0]])[0]
    here = field.stack.potential(q)[0]
    assert abs(up - dn) <= 1e-10
    assert fwd < here
    ups = field.upsilon(q)[0]
    assert abs(np.arctan2(ups[1], ups[0])) <= 1e-6


def test_rear_axis_limit_heading_matches_goal_heading(three_field):
    th = three_field.goal_heading
    back = three_field.goal - 0.4 * np.array([np.cos(th), np.sin(th)])
    lim = three_field.limit_heading(back[None])[0]
    assert abs(wrap_angle(lim - th)) <= 1e-9


@pytest.mark.parametrize("fixture,seed",
                         [("three_field", 11), ("tree_field", 12)])
def test_curves_converge_with_orientation(fixture, seed, request):
    field = request.getfixturevalue(fixture)
    world = field.stack.world
    starts = free_samples(world, 100, seed=seed, margin=0.03,
                          keep_out=field.goal, radius=0.05)
    curves = field.integrate_curve(starts)
    for curve in curves:
        end = curve[-1]
        assert np.linalg.norm(end - field.goal) <= 0.01
        tangent = end - curve[-2]
        approach = np.arctan2(tangent[1], tangent[0])
        assert abs(wrap_angle(approach - field.goal_heading)) <= 0.05
        assert np.min(world.clearance(curve)) > 0.0


def test_curves_converge_in_empty_disk(empty_disk):
    world, goal, heading = empty_disk
    field = OrientedField(TransformStack(world, goal), goal_heading=heading)
    starts = free_samples(world, 100, seed=13, keep_out=goal, radius=0.05)
    curves = field.integrate_curve(starts)
    for curve in curves:
        end = curve[-1]
        assert np.linalg.norm(end - goal) <= 0.01
        tangent = end - curve[-2]
        approach = np.arctan2(tangent[1], tangent[0])
        assert abs(wrap_angle(approach - heading)) <= 0.05
        assert np.min(world.clearance(curve)) > 0.0
