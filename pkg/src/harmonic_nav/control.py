"""Unicycle plant and the field-tracking velocity controller."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .oriented import Guidance, OrientedField, wrap_angle

_ANGLE_STEP = 1e-5
# a smooth heading field cannot turn this much across the stencil; a
# larger disagreement means it straddles one of the field's flip lines
_HEADING_JUMP = 0.5


@dataclass
class Pose:
    q: np.ndarray
    theta: float

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(2)
        self.theta = float(wrap_angle(self.theta))


@dataclass(frozen=True)
class ControlParams:
    linear_gain: float = 1.0
    angular_gain: float = 2.0
    rotation_weights: tuple = (1.0, 1.0)
    dt: float = 0.01

    def __post_init__(self):
        if min(self.linear_gain, self.angular_gain, self.dt,
               *self.rotation_weights) <= 0.0:
            raise ValueError("control parameters must be positive")


def field_heading(field: OrientedField, pts: np.ndarray) -> np.ndarray:
    u = np.atleast_2d(field.upsilon(pts))
    return np.arctan2(u[:, 1], u[:, 0])


def control(field: OrientedField, pose: Pose, params: ControlParams,
            guidance: Guidance | None = None,
            raw_feed_forward: bool = False) -> tuple:
    """Velocity pair tracking the oriented field direction.

    The linear speed saturates with distance to goal; the angular rate
    combines heading feedback with the feed-forward rate of change of
    the tracked direction along the motion, estimated by central
    differences on locally unwrapped headings.  A stencil straddling
    one of the field's flip lines would report a spurious near-infinite
    rate, so the term is dropped when a stencil pair disagrees by more
    than a smooth field allows.  With guidance the tracked direction is
    the supervisor's active regime rather than the raw field.  The
    feed-forward default expands the rate through the chain rule along
    the motion; raw_feed_forward assembles it from the field Jacobian
    instead, which agrees wherever the field is smooth.
    """
    dist = float(np.linalg.norm(pose.q - field.goal))
    if dist < 1e-9:
        return 0.0, 0.0

    h = _ANGLE_STEP
    stencil = np.array([pose.q,
                        pose.q + [h, 0.0], pose.q - [h, 0.0],
                        pose.q + [0.0, h], pose.q - [0.0, h]])
    if guidance is not None:
        th = guidance.regime_heading(stencil)
    else:
        th = field_heading(field, stencil)
    heading_err = float(wrap_angle(pose.theta - th[0]))
    # drive only as far as the heading agrees with the reference; a
    # misaligned vehicle turns in place rather than plowing off track,
    # which a thin wall collar would not survive
    v = (params.linear_gain * float(np.tanh(dist))
         * max(0.0, float(np.cos(heading_err))))
    dx = float(wrap_angle(th[1] - th[2]))
    dy = float(wrap_angle(th[3] - th[4]))
    if max(abs(dx), abs(dy)) > _HEADING_JUMP:
        feed_forward = 0.0
    elif raw_feed_forward:
        u = np.atleast_2d(field.upsilon(stencil))
        jac = np.stack([(u[1] - u[2]) / (2.0 * h),
                        (u[3] - u[4]) / (2.0 * h)], axis=-1)
        grad_theta = np.array([dx, dy]) / (2.0 * h)
        heading_vec = np.array([np.cos(pose.theta), np.sin(pose.theta)])
        feed_forward = v * float(grad_theta @ (jac @ heading_vec))
    else:
        grad_theta = np.array([dx, dy]) / (2.0 * h)
        motion = v * np.array([np.cos(pose.theta), np.sin(pose.theta)])
        feed_forward = float(grad_theta @ motion)
    w = -params.angular_gain * heading_err + feed_forward
    return v, w


def step(pose: Pose, v: float, w: float, dt: float) -> Pose:
    """One timestep of the unicycle with held velocities."""
    def deriv(state):
        return np.array([v * np.cos(state[2]), v * np.sin(state[2]), w])

    s = np.array([pose.q[0], pose.q[1], pose.theta])
    k1 = deriv(s)
    k2 = deriv(s + 0.5 * dt * k1)
    k3 = deriv(s + 0.5 * dt * k2)
    k4 = deriv(s + dt * k3)
    s = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return Pose(s[:2], s[2])


def estimate_cost(pose0: Pose, pose_goal: Pose, field: OrientedField,
                  weights: tuple = (1.0, 1.0)) -> float:
    """Distance plus weighted initial and final rotation mismatch."""
    offset = pose_goal.q - pose0.q
    dist = float(np.linalg.norm(offset))
    th_field = float(field_heading(field, pose0.q[None])[0])
    bearing = float(np.arctan2(offset[1], offset[0]))
    turn_in = abs(float(wrap_angle(th_field - pose0.theta)))
    turn_out = abs(float(wrap_angle(bearing - pose_goal.theta)))
    return dist + weights[0] * turn_in + weights[1] * turn_out
