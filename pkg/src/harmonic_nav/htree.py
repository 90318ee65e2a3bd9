"""Waypoint graphs over belief free space with learned hop-cost weights.

A tree spans one transition of the symbolic plan.  Its vertices are
oriented poses sampled from the free space known so far, its directed
edges connect mutually visible neighbors, and each edge carries an
estimate of the control cost of flying that hop.  When a newly sensed
obstacle lands in the belief world the graph is trimmed in place and
regrown where the potential changed the most, instead of being rebuilt.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from . import world as wd
from .errors import Disconnected, RankDeficient
from .oriented import wrap_angle

# waypoint hand-over distances for the tracking layer: position only at
# intermediate vertices, position and heading at the final one
WAYPOINT_VICINITY = 0.05
GOAL_ANGLE_VICINITY = 0.1

_LOS_STEP = 1e-3
_MIN_WEIGHT = 1e-3


def edge_cost(v_from: np.ndarray, v_to: np.ndarray,
              weights: tuple = (1.0, 1.0)) -> float:
    """Hop cost: length plus weighted entry and exit turns.

    The hop direction stands in for the tracked field direction, since
    the edge is costed before the field that will fly it exists.
    """
    offset = v_to[:2] - v_from[:2]
    dist = float(np.linalg.norm(offset))
    bearing = float(np.arctan2(offset[1], offset[0]))
    turn_in = abs(float(wrap_angle(bearing - v_from[2])))
    turn_out = abs(float(wrap_angle(bearing - v_to[2])))
    return dist + weights[0] * turn_in + weights[1] * turn_out


def update_weights(turns: np.ndarray, predicted: np.ndarray,
                   actual: np.ndarray) -> np.ndarray:
    """Refit the two turn weights from traversed-edge records.

    Solves the normal equations of ``turns @ w = actual - predicted``
    and clamps the result to stay positive.  Raises RankDeficient when
    the records do not determine both weights.
    """
    q = np.asarray(turns, dtype=float).reshape(-1, 2)
    rhs = np.asarray(actual, dtype=float) - np.asarray(predicted, dtype=float)
    if np.linalg.matrix_rank(q) < 2:
        raise RankDeficient("turn records do not span both weights")
    gram = q.T @ q
    w = np.linalg.solve(gram, q.T @ rhs)
    return np.maximum(w, _MIN_WEIGHT)


@dataclass
class WaypointPath:
    indices: list
    poses: np.ndarray
    cost: float


def _bounding_box(boundary: wd.Shape):
    if isinstance(boundary, wd.Circle):
        half = np.array([boundary.radius, boundary.radius])
    else:
        half = boundary.half_widths
    return boundary.center - half, boundary.center + half


class HarmonicTree:
    """Directed waypoint graph for one start pose and one goal pose."""

    def __init__(self, world: wd.ForestWorld, vertices: np.ndarray,
                 epsilon: float, weights: tuple = (1.0, 1.0), seed: int = 0):
        self.world = world
        self.vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
        self.alive = np.ones(len(self.vertices), dtype=bool)
        self.epsilon = float(epsilon)
        self.weights = tuple(weights)
        self.edges: dict = {i: {} for i in range(len(self.vertices))}
        self.start = 0
        self.goal = 1
        self._rng = np.random.default_rng(seed)

    # -- construction ----------------------------------------------------

    @classmethod
    def build(cls, world: wd.ForestWorld, start: np.ndarray,
              goal: np.ndarray, n_samples: int = 40,
              epsilon: float | None = None, weights: tuple = (1.0, 1.0),
              seed: int = 0) -> "HarmonicTree":
        start = np.asarray(start, dtype=float).reshape(3)
        goal = np.asarray(goal, dtype=float).reshape(3)
        lo, hi = _bounding_box(world.boundary)
        if epsilon is None:
            diag = float(np.linalg.norm(hi - lo))
            epsilon = 0.35 * diag / np.sqrt(max(n_samples, 1))
        rng = np.random.default_rng(seed)
        samples = cls._sample_free(world, n_samples, rng, lo, hi)
        to_goal = goal[None, :2] - samples
        thetas = np.arctan2(to_goal[:, 1], to_goal[:, 0])
        vertices = np.vstack([start, goal,
                              np.column_stack([samples, thetas])])
        tree = cls(world, vertices, epsilon, weights, seed)
        tree._rng = rng
        tree._connect(np.arange(len(vertices)))
        return tree

    @staticmethod
    def _sample_free(world: wd.ForestWorld, n: int,
                     rng: np.random.Generator, lo, hi,
                     margin: float = 0.03) -> np.ndarray:
        out: list = []
        for _ in range(200):
            if len(out) >= n:
                break
            cand = rng.uniform(lo, hi, size=(4 * n, 2))
            keep = cand[world.clearance(cand) > margin]
            out.extend(keep[: n - len(out)])
        return np.asarray(out, dtype=float).reshape(-1, 2)

    def _segments_clear(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Batched visibility of the segments a[k] to b[k]."""
        a = np.atleast_2d(a)
        b = np.atleast_2d(b)
        lengths = np.linalg.norm(b - a, axis=-1)
        n = max(2, int(np.ceil(float(lengths.max(initial=0.0)) / _LOS_STEP)) + 1)
        ts = np.linspace(0.0, 1.0, n)
        pts = a[:, None, :] + ts[None, :, None] * (b - a)[:, None, :]
        return self.world.free(pts.reshape(-1, 2)).reshape(len(a), n).all(axis=1)

    def _connect(self, new_indices: np.ndarray) -> None:
        """Wire the given vertices to every alive vertex in radius."""
        alive_idx = np.flatnonzero(self.alive)
        pairs = []
        for i in new_indices:
            d = np.linalg.norm(self.vertices[alive_idx, :2]
                               - self.vertices[i, :2], axis=-1)
            for j in alive_idx[(d < self.epsilon) & (alive_idx != i)]:
                if i < j or j not in new_indices:
                    pairs.append((int(i), int(j)))
        if not pairs:
            return
        pairs = list(dict.fromkeys(pairs))
        a = self.vertices[[p[0] for p in pairs], :2]
        b = self.vertices[[p[1] for p in pairs], :2]
        clear = self._segments_clear(a, b)
        for (i, j), ok in zip(pairs, clear):
            if not ok:
                continue
            self.edges[i][j] = edge_cost(self.vertices[i], self.vertices[j],
                                         self.weights)
            self.edges[j][i] = edge_cost(self.vertices[j], self.vertices[i],
                                         self.weights)

    def reweight(self, weights: tuple) -> None:
        """Recost every edge under new turn weights."""
        self.weights = tuple(weights)
        for i, nbrs in self.edges.items():
            for j in nbrs:
                nbrs[j] = edge_cost(self.vertices[i], self.vertices[j],
                                    self.weights)

    # -- search ----------------------------------------------------------

    def shortest_path(self) -> WaypointPath:
        """Minimum-cost waypoint sequence from the start pose to the goal.

        Best-first search guided by straight-line distance to the goal,
        which never overestimates a hop sequence whose every hop costs at
        least its length.
        """
        if not (self.alive[self.start] and self.alive[self.goal]):
            raise Disconnected("start or goal vertex was trimmed away")
        goal_q = self.vertices[self.goal, :2]
        dist = {self.start: 0.0}
        parent: dict = {}
        h0 = float(np.linalg.norm(self.vertices[self.start, :2] - goal_q))
        frontier = [(h0, 0.0, self.start)]
        done = set()
        while frontier:
            _, g, i = heapq.heappop(frontier)
            if i in done:
                continue
            if i == self.goal:
                break
            done.add(i)
            for j, c in self.edges[i].items():
                if not self.alive[j] or j in done:
                    continue
                cand = g + c
                if cand < dist.get(j, np.inf):
                    dist[j] = cand
                    parent[j] = i
                    h = float(np.linalg.norm(self.vertices[j, :2] - goal_q))
                    heapq.heappush(frontier, (cand + h, cand, j))
        if self.goal not in dist:
            raise Disconnected("no waypoint route reaches the goal pose")
        indices = [self.goal]
        while indices[-1] != self.start:
            indices.append(parent[indices[-1]])
        indices.reverse()
        return WaypointPath(indices, self.vertices[indices].copy(),
                            dist[self.goal])

    def path_cost(self, indices) -> float:
        return float(sum(self.edges[i][j]
                         for i, j in zip(indices[:-1], indices[1:])))

    # -- online maintenance ----------------------------------------------

    def trim(self, shape: wd.Shape) -> None:
        """Drop vertices inside the new obstacle and edges crossing it."""
        inside = wd.beta(shape, self.vertices[:, :2]) <= 0.0
        for i in np.flatnonzero(inside & self.alive):
            self.alive[i] = False
            for j in list(self.edges[i]):
                del self.edges[i][j]
                self.edges[j].pop(i, None)
        pairs = [(i, j) for i in self.edges for j in self.edges[i] if i < j]
        if not pairs:
            return
        a = self.vertices[[p[0] for p in pairs], :2]
        b = self.vertices[[p[1] for p in pairs], :2]
        lengths = np.linalg.norm(b - a, axis=-1)
        n = max(2, int(np.ceil(float(lengths.max()) / _LOS_STEP)) + 1)
        ts = np.linspace(0.0, 1.0, n)
        pts = a[:, None, :] + ts[None, :, None] * (b - a)[:, None, :]
        hit = (wd.beta(shape, pts.reshape(-1, 2)).reshape(len(pairs), n)
               <= 0.0).any(axis=1)
        for (i, j), bad in zip(pairs, hit):
            if bad:
                self.edges[i].pop(j, None)
                self.edges[j].pop(i, None)

    def regenerate(self, phi_old, phi_new, n_new: int,
                   probe: int = 48) -> None:
        """Draw replacement vertices where the potential changed.

        Candidates are accepted in proportion to the local change of the
        potential, normalized by its largest probe-grid value; when the
        two potentials agree everywhere the draw falls back to uniform.
        """
        if n_new <= 0:
            return
        lo, hi = _bounding_box(self.world.boundary)
        gx = np.linspace(lo[0], hi[0], probe)
        gy = np.linspace(lo[1], hi[1], probe)
        grid = np.stack(np.meshgrid(gx, gy), axis=-1).reshape(-1, 2)
        b_max = float(np.max(np.abs(np.asarray(phi_new(grid))
                                    - np.asarray(phi_old(grid)))))
        goal_q = self.vertices[self.goal, :2]
        accepted: list = []
        for _ in range(500 * n_new):
            if len(accepted) >= n_new:
                break
            q = self._rng.uniform(lo, hi)
            if self.world.clearance(q[None])[0] <= 0.03:
                continue
            if b_max > 1e-12:
                change = float(np.abs(np.asarray(phi_new(q[None]))
                                      - np.asarray(phi_old(q[None])))[0])
                if self._rng.random() > change / b_max:
                    continue
            accepted.append(q)
        if not accepted:
            return
        qs = np.asarray(accepted)
        to_goal = goal_q[None] - qs
        thetas = np.arctan2(to_goal[:, 1], to_goal[:, 0])
        base = len(self.vertices)
        self.vertices = np.vstack([self.vertices,
                                   np.column_stack([qs, thetas])])
        self.alive = np.concatenate([self.alive, np.ones(len(qs), bool)])
        for k in range(len(qs)):
            self.edges[base + k] = {}
        self._connect(np.arange(base, base + len(qs)))

    # -- serialization ---------------------------------------------------

    def to_dict(self, path: WaypointPath | None = None) -> dict:
        alive_idx = np.flatnonzero(self.alive)
        remap = {int(i): k for k, i in enumerate(alive_idx)}
        doc = {
            "vertices": [[float(x), float(y), float(t)]
                         for x, y, t in self.vertices[alive_idx]],
            "edges": [[remap[i], remap[j], float(c)]
                      for i in self.edges for j, c in self.edges[i].items()
                      if self.alive[i] and self.alive[j]],
        }
        if path is not None:
            doc["path"] = [remap[int(i)] for i in path.indices]
        return doc
