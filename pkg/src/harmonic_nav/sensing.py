"""Simulated Lidar, scan clustering, and shape fitting.

A scan casts evenly spaced beams from the robot pose and returns the
first boundary crossing of each, found by bisection on the sign of the
implicit functions.  The returned cloud is split into clusters at range
discontinuities and sharp turns, each cluster is fitted with a circle
or a squircle, and the fits are folded into the belief world, either
refining a known obstacle in place or inserting a newly seen one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import world as wd
from .errors import FitDiverged

_MARCH_SAMPLES = 256
_BISECT_TOL = 1e-6
_TURN_LIMIT = np.deg2rad(60.0)


@dataclass(frozen=True)
class SensorModel:
    max_range: float = 1.2
    beams: int = 360

    def __post_init__(self):
        if self.max_range <= 0.0:
            raise ValueError("sensor range must be positive")
        if self.beams < 90:
            raise ValueError("at least 90 beams are required")

    @property
    def resolution(self) -> float:
        """Angular spacing between adjacent beams [rad]."""
        return 2.0 * np.pi / self.beams


@dataclass
class PointCloud:
    points: np.ndarray
    origin: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)


@dataclass
class Cluster:
    points: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class ObstacleAdded:
    node_id: int
    shape: wd.Shape
    relation: str


@dataclass(frozen=True)
class ObstacleRefined:
    node_id: int
    shape: wd.Shape


def scan(true_world: wd.ForestWorld, pose, model: SensorModel,
         time: float = 0.0) -> PointCloud:
    """One full sweep; beams that reach max_range unobstructed are
    omitted, so the cloud holds boundary points only."""
    q = np.asarray(pose.q, dtype=float).reshape(2)
    angles = pose.theta + np.arange(model.beams) * model.resolution
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    ts = np.linspace(0.0, model.max_range, _MARCH_SAMPLES + 1)[1:]
    samples = q + ts[None, :, None] * dirs[:, None, :]
    occupied = ~true_world.free(samples.reshape(-1, 2)).reshape(
        model.beams, _MARCH_SAMPLES)
    hit = occupied.any(axis=1)
    if not hit.any():
        return PointCloud(np.empty((0, 2)), q, time)
    first = np.argmax(occupied[hit], axis=1)
    hi = ts[first]
    lo = np.where(first > 0, ts[np.maximum(first - 1, 0)], 0.0)
    d = dirs[hit]
    while np.max(hi - lo) > _BISECT_TOL:
        mid = 0.5 * (lo + hi)
        inside = true_world.free(q + mid[:, None] * d)
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    pts = q + (0.5 * (lo + hi))[:, None] * d
    return PointCloud(pts, q, time)


def cluster(cloud: PointCloud, gap_factor: float = 3.0) -> list[Cluster]:
    """Split the sweep at range discontinuities and sharp turns.

    The sweep is circular, so the first and last runs merge when no
    break separates them.
    """
    pts = cloud.points
    n = len(pts)
    if n == 0:
        return []
    if n <= 2:
        return [Cluster(pts, cloud.time)]
    nxt = np.roll(pts, -1, axis=0)
    seg = nxt - pts
    gaps = np.linalg.norm(seg, axis=-1)
    headings = np.arctan2(seg[:, 1], seg[:, 0])
    turn = np.abs((np.diff(headings, append=headings[0:1]) + np.pi)
                  % (2.0 * np.pi) - np.pi)
    brk = gaps > gap_factor * np.median(gaps)
    # a turn is measured at the point between two segments
    brk = brk | np.roll(turn > _TURN_LIMIT, 1)
    if not brk.any():
        return [Cluster(pts, cloud.time)]
    # cut after every break point, starting the sequence at one of them
    start = (int(np.flatnonzero(brk)[0]) + 1) % n
    order = np.roll(np.arange(n), -start)
    cuts = np.flatnonzero(brk[order])
    pieces = np.split(pts[order], cuts + 1)
    return [Cluster(p, cloud.time) for p in pieces if len(p) > 0]


def fit_circle(cl: Cluster) -> wd.Circle:
    """Algebraic least-squares circle through the cluster points."""
    pts = cl.points
    if len(pts) < 6:
        raise FitDiverged("too few points to support a circle fit")
    a = np.column_stack([2.0 * pts, np.ones(len(pts))])
    b = np.sum(pts * pts, axis=-1)
    sol, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < 3:
        raise FitDiverged("circle fit is degenerate")
    center = sol[:2]
    r2 = sol[2] + float(center @ center)
    if r2 <= 0.0:
        raise FitDiverged("circle fit produced a non-positive radius")
    return wd.Circle(center, float(np.sqrt(r2)))


def _squircle_residual(params: np.ndarray, pts: np.ndarray) -> np.ndarray:
    shape = wd.Squircle(params[:2], params[2:4], params[4])
    return wd.beta(shape, pts)


def fit_squircle(cl: Cluster, residual_tol: float = 1e-3,
                 max_iter: int = 60) -> wd.Squircle:
    """Damped Gauss-Newton fit of a squircle to the cluster points.

    Minimizes the summed squared implicit function over center, half
    widths and squareness, starting from the axis-aligned bounding box.
    """
    pts = cl.points
    if len(pts) < 12:
        raise FitDiverged("too few points to support a squircle fit")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    params = np.concatenate([0.5 * (lo + hi),
                             np.maximum(0.5 * (hi - lo), 1e-3), [0.8]])
    lam = 1e-3
    res = _squircle_residual(params, pts)
    cost = float(res @ res)
    for _ in range(max_iter):
        jac = np.empty((len(pts), 5))
        for j in range(5):
            h = 1e-6 * max(1.0, abs(params[j]))
            up, dn = params.copy(), params.copy()
            up[j] += h
            dn[j] -= h
            jac[:, j] = (_squircle_residual(up, pts)
                         - _squircle_residual(dn, pts)) / (2.0 * h)
        g = jac.T @ res
        jtj = jac.T @ jac
        accepted = False
        for _ in range(8):
            aug = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-12))
            try:
                delta = np.linalg.solve(aug, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = params + delta
            trial[2:4] = np.maximum(trial[2:4], 1e-4)
            trial[4] = min(max(trial[4], wd.KAPPA_MIN), wd.KAPPA_MAX)
            trial_res = _squircle_residual(trial, pts)
            trial_cost = float(trial_res @ trial_res)
            if trial_cost < cost:
                params, res, cost = trial, trial_res, trial_cost
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        if float(np.linalg.norm(delta)) < 1e-12:
            break
    rms = float(np.sqrt(cost / len(pts)))
    if rms > residual_tol:
        raise FitDiverged(f"squircle fit residual {rms:.2e} too large")
    return wd.Squircle(params[:2], params[2:4], params[4])


def fit_cluster(cl: Cluster, residual_tol: float = 1e-3) -> wd.Shape:
    """Fit whichever shape family supports the cluster.

    A circle is accepted when its own residual is already small, since
    the squircle family contains near-circles and would fit one with
    poorly conditioned squareness.
    """
    try:
        circle = fit_circle(cl)
        r = np.linalg.norm(cl.points - circle.center, axis=-1) / circle.radius
        if float(np.sqrt(np.mean((r * r - 1.0) ** 2))) <= residual_tol:
            return circle
    except FitDiverged:
        pass
    return fit_squircle(cl, residual_tol)


def arc_span(points: np.ndarray, center: np.ndarray) -> float:
    """Angular extent of the points as seen from a shape center [rad]."""
    rel = np.asarray(points, dtype=float) - np.asarray(center, dtype=float)
    ang = np.sort(np.arctan2(rel[:, 1], rel[:, 0]))
    if len(ang) < 2:
        return 0.0
    gaps = np.diff(ang, append=ang[:1] + 2.0 * np.pi)
    return float(2.0 * np.pi - np.max(gaps))


def explained(belief: wd.ForestWorld, points: np.ndarray,
              tol: float = 0.02) -> np.ndarray:
    """Mask of points lying on a shape the belief world already has."""
    points = np.asarray(points, dtype=float)
    mask = np.abs(wd.beta(belief.boundary, points)) <= tol
    for node in belief.obstacles():
        mask = mask | (np.abs(wd.beta(node.shape, points)) <= tol)
    return mask


def integrate(belief: wd.ForestWorld, fits: list,
              match_radius: float = 0.2) -> list:
    """Fold fitted shapes into the belief world.

    A fit whose center lies within match_radius of a known obstacle
    refines that obstacle in place; anything else is inserted as a new
    one.  Returns the world-change events in application order.
    """
    events = []
    for shape in fits:
        best_id, best_d = None, np.inf
        for node in belief.obstacles():
            d = float(np.linalg.norm(node.shape.center - shape.center))
            if d < best_d:
                best_id, best_d = node.node_id, d
        if best_id is not None and best_d < match_radius:
            belief.refine_obstacle(best_id, shape)
            events.append(ObstacleRefined(best_id, shape))
        else:
            node = belief.insert_obstacle(shape)
            relation = "independent" if node.parent is None else "leaf"
            events.append(ObstacleAdded(node.node_id, shape, relation))
    return events
