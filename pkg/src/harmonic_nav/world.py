"""World model: squircle and circle shapes organized as an obstacle forest.

Shapes carry an implicit function ``beta`` that is negative inside, zero on
the boundary and positive outside.  Obstacles discovered at runtime either
stand alone (new tree root) or overlap exactly one existing obstacle, in
which case they are attached below it as a leaf.  The workspace boundary is
itself a shape flagged with ``is_workspace_boundary``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional, Union

import numpy as np

from .errors import OutsideBoundary, OverlapAmbiguous

KAPPA_MIN = 1e-6
KAPPA_MAX = 1.0 - 1e-6

_OVERLAP_SAMPLES = 512
_CENTROID_SAMPLES = 10_000


@dataclass
class Circle:
    center: np.ndarray
    radius: float
    is_workspace_boundary: bool = False

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(2)
        self.radius = float(self.radius)
        if self.radius <= 0.0:
            raise ValueError("circle radius must be positive")


@dataclass
class Squircle:
    center: np.ndarray
    half_widths: np.ndarray
    kappa: float
    is_workspace_boundary: bool = False

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(2)
        self.half_widths = np.asarray(self.half_widths, dtype=float).reshape(2)
        if np.any(self.half_widths <= 0.0):
            raise ValueError("squircle half widths must be positive")
        # squareness is clamped away from both limits: kappa=0 is an exact
        # ellipse handled fine, kappa=1 makes the implicit function C^0 only
        self.kappa = float(min(max(self.kappa, KAPPA_MIN), KAPPA_MAX))


Shape = Union[Circle, Squircle]


def unit_beta(q: np.ndarray, kappa: float) -> np.ndarray:
    """Implicit function of the unit squircle at the origin."""
    q = np.asarray(q, dtype=float)
    n2 = np.sum(q * q, axis=-1)
    cross = q[..., 0] * q[..., 1]
    inner = n2 * n2 - 4.0 * kappa * kappa * cross * cross
    return 0.5 * (n2 + np.sqrt(np.maximum(inner, 0.0))) - 1.0


def beta(shape: Shape, q: np.ndarray) -> np.ndarray:
    """Evaluate the implicit function of ``shape`` at points ``q`` (..., 2).

    Negative inside, zero on the boundary, positive outside; normalized so
    that a circle and a kappa->0 squircle of equal size agree.
    """
    q = np.asarray(q, dtype=float)
    if isinstance(shape, Circle):
        d = q - shape.center
        return np.sum(d * d, axis=-1) / (shape.radius * shape.radius) - 1.0
    d = (q - shape.center) / shape.half_widths
    return unit_beta(d, shape.kappa)


def unit_ray_length(direction: np.ndarray, kappa: float) -> np.ndarray:
    """Distance from the origin to the unit-squircle boundary along a unit
    direction.  Closed form: beta(r*d) = 0 gives r = (beta(d)+1)^(-1/2)."""
    return 1.0 / np.sqrt(unit_beta(direction, kappa) + 1.0)


def boundary_points(shape: Shape, n: int, phase: float = 0.0) -> np.ndarray:
    """``n`` points on the shape boundary, indexed by polar angle."""
    theta = phase + np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    d = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    if isinstance(shape, Circle):
        return shape.center + shape.radius * d
    r = unit_ray_length(d, shape.kappa)
    return shape.center + shape.half_widths * (r[:, None] * d)


@lru_cache(maxsize=512)
def _unit_squircle_area(kappa: float) -> float:
    theta = np.linspace(0.0, 2.0 * np.pi, 4097)
    s2 = np.sin(2.0 * theta)
    r2 = 2.0 / (1.0 + np.sqrt(1.0 - kappa * kappa * s2 * s2))
    return float(np.trapezoid(0.5 * r2, theta))


def shape_area(shape: Shape) -> float:
    """Enclosed area; the squircle case integrates the polar radius."""
    if isinstance(shape, Circle):
        return float(np.pi * shape.radius * shape.radius)
    return float(shape.half_widths[0] * shape.half_widths[1]
                 * _unit_squircle_area(shape.kappa))


def circumradius(shape: Shape) -> float:
    """Largest center-to-boundary distance."""
    if isinstance(shape, Circle):
        return shape.radius
    pts = boundary_points(shape, 720)
    return float(np.max(np.linalg.norm(pts - shape.center, axis=-1)))


def ray_to_boundary(shape: Shape, origin: np.ndarray, directions: np.ndarray,
                    iterations: int = 60) -> np.ndarray:
    """First boundary crossing along rays from an interior point.

    ``origin`` must be strictly inside ``shape``; ``directions`` (..., 2) need
    not be normalized.  Returns the scalar ray parameters.  Solved by
    bisection on beta, valid because the shapes are convex.
    """
    origin = np.asarray(origin, dtype=float)
    d = np.asarray(directions, dtype=float)
    norms = np.linalg.norm(d, axis=-1, keepdims=True)
    d = d / norms
    if isinstance(shape, Circle):
        reach = shape.radius
    else:
        reach = float(np.max(shape.half_widths)) * 1.5
    hi = np.full(d.shape[:-1], np.linalg.norm(origin - shape.center) + 2.0 * reach)
    lo = np.zeros_like(hi)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        inside = beta(shape, origin + mid[..., None] * d) < 0.0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return 0.5 * (lo + hi)


def shape_to_dict(shape: Shape) -> dict:
    if isinstance(shape, Circle):
        return {"type": "circle", "center": list(map(float, shape.center)),
                "radius": shape.radius}
    return {"type": "squircle", "center": list(map(float, shape.center)),
            "half_widths": list(map(float, shape.half_widths)),
            "kappa": shape.kappa}


def shape_from_dict(doc: dict, is_workspace_boundary: bool = False) -> Shape:
    kind = doc.get("type")
    if kind == "circle":
        return Circle(doc["center"], doc["radius"], is_workspace_boundary)
    if kind == "squircle":
        return Squircle(doc["center"], doc["half_widths"], doc["kappa"],
                        is_workspace_boundary)
    raise ValueError(f"unknown shape type: {kind!r}")


def inflate(shape: Shape, margin: float) -> Shape:
    """Grow a shape by a body radius, used when planning for a disk robot."""
    if margin == 0.0:
        return copy.deepcopy(shape)
    if isinstance(shape, Circle):
        return Circle(shape.center, shape.radius + margin,
                      shape.is_workspace_boundary)
    return Squircle(shape.center, shape.half_widths + margin, shape.kappa,
                    shape.is_workspace_boundary)


@dataclass
class Region:
    """Labelled goal disk used by the task layer."""
    label: str
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(2)
        self.radius = float(self.radius)

    def contains(self, q: np.ndarray) -> np.ndarray:
        d = np.asarray(q, dtype=float) - self.center
        return np.sum(d * d, axis=-1) <= self.radius * self.radius


@dataclass
class ObstacleNode:
    node_id: int
    shape: Shape
    parent: Optional[int] = None
    depth: int = 0
    children: list = field(default_factory=list)
    # interior point shared with the parent, set for non-roots only
    common_center: Optional[np.ndarray] = None
    # per-leaf parameters of the purging transform
    purge_margin: float = 0.0
    purge_stiffness: float = 1.0

    def __post_init__(self):
        if self.common_center is not None:
            self.common_center = np.asarray(self.common_center, float).reshape(2)
        if self.purge_margin <= 0.0:
            self.purge_margin = default_purge_margin(self.shape)


def default_purge_margin(shape: Shape) -> float:
    if isinstance(shape, Circle):
        return 0.1 * shape.radius
    return 0.1 * float(np.min(shape.half_widths))


def _overlaps(new: Shape, existing: Shape) -> bool:
    """Overlap test: sampled boundary of one inside the other, plus mutual
    center containment for the nesting cases."""
    pts = boundary_points(new, _OVERLAP_SAMPLES)
    if np.any(beta(existing, pts) < 0.0):
        return True
    if beta(existing, new.center) < 0.0:
        return True
    if beta(new, existing.center) < 0.0:
        return True
    return False


class ForestWorld:
    """Workspace boundary plus obstacles organized as trees.

    Mutation is limited to ``insert_obstacle`` and ``refine_obstacle``; all
    readers treat the instance as a snapshot.  The sampler used for common
    centers is owned by the world so repeated runs are reproducible.
    """

    def __init__(self, boundary: Shape, regions: Iterable[Region] = (),
                 seed: int = 0):
        if not boundary.is_workspace_boundary:
            raise ValueError("boundary shape must set is_workspace_boundary")
        self.boundary = boundary
        self.regions = list(regions)
        self.nodes: dict[int, ObstacleNode] = {}
        self._next_id = 0
        self._rng = np.random.default_rng(seed)
        self.version = 0

    # -- queries ---------------------------------------------------------

    def obstacles(self) -> list[ObstacleNode]:
        return list(self.nodes.values())

    def roots(self) -> list[ObstacleNode]:
        return [n for n in self.nodes.values() if n.parent is None]

    def node_count(self) -> int:
        return len(self.nodes)

    def free(self, q: np.ndarray) -> np.ndarray:
        """True where ``q`` lies strictly inside the workspace and strictly
        outside every obstacle."""
        q = np.asarray(q, dtype=float)
        ok = beta(self.boundary, q) < 0.0
        for node in self.nodes.values():
            ok = ok & (beta(node.shape, q) > 0.0)
        return ok

    def clearance(self, q: np.ndarray) -> np.ndarray:
        """Smallest implicit-function margin over boundary and obstacles;
        positive iff free.  A beta margin, not a metric distance."""
        q = np.asarray(q, dtype=float)
        m = -beta(self.boundary, q)
        for node in self.nodes.values():
            m = np.minimum(m, beta(node.shape, q))
        return m

    def line_of_sight(self, a: np.ndarray, b: np.ndarray,
                      step: float = 1e-3) -> bool:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        length = float(np.linalg.norm(b - a))
        n = max(2, int(np.ceil(length / step)) + 1)
        ts = np.linspace(0.0, 1.0, n)
        pts = a + ts[:, None] * (b - a)
        return bool(np.all(self.free(pts)))

    def purge_order(self) -> list[int]:
        """Non-root node ids in the order their purging maps are applied:
        trees by root insertion order, deepest nodes first within a tree,
        insertion order on ties."""
        order: list[int] = []
        for root in self.roots():
            members = [n for n in self.nodes.values()
                       if self._root_of(n.node_id) == root.node_id
                       and n.parent is not None]
            members.sort(key=lambda n: (-n.depth, n.node_id))
            order.extend(n.node_id for n in members)
        return order

    def _root_of(self, node_id: int) -> int:
        node = self.nodes[node_id]
        while node.parent is not None:
            node = self.nodes[node.parent]
        return node.node_id

    # -- mutation --------------------------------------------------------

    def insert_obstacle(self, shape: Shape, purge_stiffness: float = 1.0,
                        purge_margin: float = 0.0) -> ObstacleNode:
        """Insert a discovered obstacle, keeping the forest property.

        No overlap with existing obstacles makes a new root; overlap with
        exactly one node attaches a leaf below it.  Raises OutsideBoundary
        or OverlapAmbiguous otherwise.  Supported tree depth is 3.
        """
        pts = boundary_points(shape, _OVERLAP_SAMPLES)
        if np.any(beta(self.boundary, pts) >= 0.0):
            raise OutsideBoundary("obstacle crosses the workspace boundary")

        hits = [n for n in self.nodes.values() if _overlaps(shape, n.shape)]
        if len(hits) > 1:
            raise OverlapAmbiguous(
                f"new obstacle overlaps {len(hits)} existing obstacles")

        if not hits:
            node = ObstacleNode(self._next_id, shape,
                                purge_stiffness=purge_stiffness,
                                purge_margin=purge_margin)
        else:
            parent = hits[0]
            common = self._intersection_centroid(shape, parent.shape)
            node = ObstacleNode(self._next_id, shape, parent=parent.node_id,
                                depth=parent.depth + 1, common_center=common,
                                purge_stiffness=purge_stiffness,
                                purge_margin=purge_margin)
            parent.children.append(node.node_id)
        self.nodes[node.node_id] = node
        self._next_id += 1
        self.version += 1
        return node

    def refine_obstacle(self, node_id: int, shape: Shape) -> ObstacleNode:
        """Replace a node's shape in place after a better fit."""
        node = self.nodes[node_id]
        node.shape = shape
        node.purge_margin = default_purge_margin(shape)
        self.version += 1
        return node

    def _intersection_centroid(self, a: Shape, b: Shape) -> np.ndarray:
        """Centroid of the overlap region by rejection sampling in the
        bounding box of the smaller shape."""
        small = a if shape_area(a) <= shape_area(b) else b
        if isinstance(small, Circle):
            half = np.array([small.radius, small.radius])
        else:
            half = small.half_widths
        lo = small.center - half
        hi = small.center + half
        samples = self._rng.uniform(lo, hi, size=(_CENTROID_SAMPLES, 2))
        mask = (beta(a, samples) < 0.0) & (beta(b, samples) < 0.0)
        if not np.any(mask):
            raise OverlapAmbiguous("overlap region too small to locate")
        centroid = samples[mask].mean(axis=0)
        if beta(a, centroid) >= 0.0 or beta(b, centroid) >= 0.0:
            raise OverlapAmbiguous("overlap region is not star shaped enough")
        return centroid

    # -- copies and serialization ---------------------------------------

    def clone(self) -> "ForestWorld":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        return {
            "boundary": shape_to_dict(self.boundary),
            "obstacles": [shape_to_dict(n.shape) for n in self.nodes.values()],
            "regions": [{"label": r.label, "center": list(map(float, r.center)),
                         "radius": r.radius} for r in self.regions],
        }
