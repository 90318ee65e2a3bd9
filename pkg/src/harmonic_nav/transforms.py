"""Diffeomorphism stack from a forest world to a point world.

The navigation potential is built by composing four maps: purging leaf
obstacles into their parents (forest to star world), scaling star obstacles
onto model spheres, contracting spheres to points followed by the unbounded
radial map (sphere world to point world), and finally the harmonic point
potential squashed to a bounded range.

Two implementation choices keep the construction numerically sound across
world sizes and are shared verbatim with the recursive evaluator:

* every scaling deformation is multiplied by a C2 window in the obstacle
  function, so each map is exactly the identity outside a collar around its
  obstacle; the switch values are untouched, only the radial terms taper;
* the omitted products inside the analytic switches use saturated obstacle
  functions (linear near the boundary, flat at one far away), keeping the
  switch scale uniform instead of growing with the product of squared
  distances over all obstacles.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import world as wd
from .world import Circle, Squircle, ForestWorld, ObstacleNode

_EPS = 1e-300


@dataclass(frozen=True)
class TransformParams:
    """Parameters of the diffeomorphism stack and the squashed potential."""

    # base switch stiffness; the effective value scales with the squared
    # workspace diameter and grows by one base unit per independent obstacle
    switch_sharpness: float = 1.0
    # base divisor of the obstacle log terms, raised by one per independent
    # obstacle so it always exceeds the point-obstacle count
    harmonic_gain: float = 2.0
    # upper bound of the squashed potential
    potential_cap: float = 1.0
    # ramp width of the sphere-to-point contraction, in sphere-beta units
    contraction_width: float = 0.5
    # model sphere of the outer boundary exceeds its circumradius by this
    boundary_margin: float = 1.05
    # beta collar outside which scaling deformations vanish identically
    window_inner: float = 0.5
    window_outer: float = 2.0

    def __post_init__(self):
        if self.switch_sharpness <= 0.0:
            raise ValueError("switch_sharpness must be positive")
        if self.potential_cap < 1.0:
            raise ValueError("potential_cap must be at least one")
        if not 0.0 < self.window_inner < self.window_outer:
            raise ValueError("window must satisfy 0 < inner < outer")


def smootherstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def deformation_window(beta_vals: np.ndarray, inner: float,
                       outer: float) -> np.ndarray:
    """One inside the collar, zero beyond it, C2 in between."""
    return 1.0 - smootherstep((beta_vals - inner) / (outer - inner))


def saturated(beta_vals: np.ndarray) -> np.ndarray:
    """Obstacle function flattened to one away from the boundary.

    Identity below one half, then a tanh approach to one; C2 at the joint.
    Keeps omitted products bounded while preserving their zero sets.
    """
    b = np.asarray(beta_vals, dtype=float)
    u = b - 0.5
    return np.where(u <= 0.0, b, 0.5 + 0.5 * np.tanh(2.0 * np.clip(u, 0.0, None)))


def analytic_switch(gamma: np.ndarray, omitted: np.ndarray,
                    stiffness: float, beta_own: np.ndarray) -> np.ndarray:
    num = gamma * omitted
    return num / (num + stiffness * beta_own)


def _circle_ray(center: np.ndarray, radius: float, origin: np.ndarray,
                unit_dirs: np.ndarray) -> np.ndarray:
    o = origin - center
    b = np.sum(unit_dirs * o, axis=-1)
    c = float(np.dot(o, o)) - radius * radius
    disc = np.maximum(b * b - c, 0.0)
    return -b + np.sqrt(disc)


def _squircle_ray_estimate(shape: Squircle, origin: np.ndarray,
                           unit_dirs: np.ndarray) -> np.ndarray:
    # piecewise scaling matrix: half widths shifted by the center offset on
    # the side the ray leaves toward
    offset = shape.center - origin
    sgn = np.where(unit_dirs >= 0.0, 1.0, -1.0)
    a_eff = np.maximum(shape.half_widths + sgn * offset, 1e-9)
    z = unit_dirs / a_eff
    zn = np.linalg.norm(z, axis=-1)
    zu = z / zn[..., None]
    return wd.unit_ray_length(zu, shape.kappa) / zn


def _squircle_ray_exact(shape: Squircle, origin: np.ndarray,
                        unit_dirs: np.ndarray) -> np.ndarray:
    """Distance from an interior point to the squircle boundary along unit
    rays.  Newton on the polynomial form of beta=0, seeded by the piecewise
    matrix estimate, with a bisection fallback for stragglers."""
    u = (origin - shape.center) / shape.half_widths
    w = unit_dirs / shape.half_widths
    k2 = shape.kappa * shape.kappa
    # squared norm and coordinate product along the ray are quadratics in t
    s2 = np.sum(w * w, axis=-1)
    s1 = 2.0 * np.sum(u * w, axis=-1)
    s0 = float(np.dot(u, u))
    p2 = w[..., 0] * w[..., 1]
    p1 = u[0] * w[..., 1] + u[1] * w[..., 0]
    p0 = u[0] * u[1]

    est = _squircle_ray_estimate(shape, origin, unit_dirs)
    t = est
    for _ in range(8):
        P = (p2 * t + p1) * t + p0
        S = (s2 * t + s1) * t + s0
        g = k2 * P * P - S + 1.0
        dP = 2.0 * p2 * t + p1
        dS = 2.0 * s2 * t + s1
        dg = 2.0 * k2 * P * dP - dS
        t = t - g / np.where(np.abs(dg) < 1e-30, 1e-30, dg)
    t = np.maximum(t, 1e-12)

    # accept only the near root; a jump to the far-side crossing or a stall
    # from a degenerate seed falls back to bisection
    res = wd.beta(shape, origin + t[..., None] * unit_dirs)
    bad = ~((np.abs(res) < 1e-12) & (t > 0.3 * est) & (t < 3.0 * est))
    if np.any(bad):
        t_bad = wd.ray_to_boundary(shape, origin, unit_dirs[bad])
        t = t.copy()
        t[bad] = t_bad
    return t


def parent_ray_length(shape: wd.Shape, origin: np.ndarray,
                      unit_dirs: np.ndarray) -> np.ndarray:
    """Ray length from a common center to the parent boundary."""
    if isinstance(shape, Circle):
        return _circle_ray(shape.center, shape.radius, origin, unit_dirs)
    return _squircle_ray_exact(shape, origin, unit_dirs)


@dataclass
class PurgeEntry:
    """Cached data for one leaf-purging map."""
    node_id: int
    leaf_shape: wd.Shape
    parent_shape: wd.Shape
    common_center: np.ndarray
    margin: float          # E value offsetting the junction remap
    stiffness: float       # raw per-leaf switch stiffness
    root_order: int
    depth: int
    # indices into the stacked obstacle list for the omitted products
    idx_all: np.ndarray    # every obstacle except leaf and parent
    idx_leaves: np.ndarray  # every non-root obstacle except the leaf
    self_index: int
    parent_index: int


class _ShapeTable:
    """All obstacle shapes stacked for one-pass beta evaluation."""

    def __init__(self, shapes: list):
        self.shapes = list(shapes)
        self.circle_idx = [i for i, s in enumerate(shapes) if isinstance(s, Circle)]
        self.squircle_idx = [i for i, s in enumerate(shapes) if isinstance(s, Squircle)]
        if self.circle_idx:
            self.c_centers = np.array([shapes[i].center for i in self.circle_idx])
            self.c_r2 = np.array([shapes[i].radius ** 2 for i in self.circle_idx])
        if self.squircle_idx:
            self.s_centers = np.array([shapes[i].center for i in self.squircle_idx])
            self.s_half = np.array([shapes[i].half_widths for i in self.squircle_idx])
            self.s_kappa2 = np.array([shapes[i].kappa ** 2 for i in self.squircle_idx])

    def extended(self, shape) -> "_ShapeTable":
        """Table over the shape list grown by one, sharing the other type's
        arrays with the source table."""
        t = object.__new__(_ShapeTable)
        i = len(self.shapes)
        t.shapes = self.shapes + [shape]
        if isinstance(shape, Circle):
            t.circle_idx = self.circle_idx + [i]
            t.squircle_idx = self.squircle_idx
            if self.circle_idx:
                t.c_centers = np.vstack([self.c_centers, shape.center[None]])
                t.c_r2 = np.append(self.c_r2, shape.radius ** 2)
            else:
                t.c_centers = shape.center[None].copy()
                t.c_r2 = np.array([shape.radius ** 2])
            if self.squircle_idx:
                t.s_centers = self.s_centers
                t.s_half = self.s_half
                t.s_kappa2 = self.s_kappa2
        else:
            t.squircle_idx = self.squircle_idx + [i]
            t.circle_idx = self.circle_idx
            if self.squircle_idx:
                t.s_centers = np.vstack([self.s_centers, shape.center[None]])
                t.s_half = np.vstack([self.s_half, shape.half_widths[None]])
                t.s_kappa2 = np.append(self.s_kappa2, shape.kappa ** 2)
            else:
                t.s_centers = shape.center[None].copy()
                t.s_half = shape.half_widths[None].copy()
                t.s_kappa2 = np.array([shape.kappa ** 2])
            if self.circle_idx:
                t.c_centers = self.c_centers
                t.c_r2 = self.c_r2
        return t

    def betas(self, pts: np.ndarray) -> np.ndarray:
        """(N, M) obstacle functions at pts."""
        n = pts.shape[0]
        out = np.empty((n, len(self.shapes)))
        if self.circle_idx:
            d = pts[:, None, :] - self.c_centers[None, :, :]
            out[:, self.circle_idx] = np.sum(d * d, axis=-1) / self.c_r2 - 1.0
        if self.squircle_idx:
            d = (pts[:, None, :] - self.s_centers[None, :, :]) / self.s_half[None, :, :]
            n2 = np.sum(d * d, axis=-1)
            cross2 = (d[..., 0] * d[..., 1]) ** 2
            inner = np.maximum(n2 * n2 - 4.0 * self.s_kappa2 * cross2, 0.0)
            out[:, self.squircle_idx] = 0.5 * (n2 + np.sqrt(inner)) - 1.0
        return out


class TransformStack:
    """Snapshot evaluator of the full diffeomorphism and potential.

    Construction precomputes per-obstacle caches; ``with_obstacle`` extends
    a stack by one obstacle reusing every existing cache, which is what the
    incremental layer measures against a full rebuild.
    """

    def __init__(self, forest: ForestWorld, goal: np.ndarray,
                 params: TransformParams = TransformParams(),
                 _copy_from: Optional["TransformStack"] = None,
                 _new_node: Optional[ObstacleNode] = None):
        self.world = forest
        self.goal = np.asarray(goal, dtype=float).reshape(2)
        self.params = params
        if _copy_from is None:
            self._build_all()
            self._finalize()
        else:
            self._extend_from(_copy_from, _new_node)

    # -- construction ----------------------------------------------------

    def _build_all(self):
        w = self.world
        self.boundary = w.boundary
        self.q0 = w.boundary.center
        self.rho0 = self.params.boundary_margin * wd.circumradius(w.boundary)
        self.nodes = list(w.nodes.values())
        self.node_pos = {n.node_id: i for i, n in enumerate(self.nodes)}
        self.roots = [n for n in self.nodes if n.parent is None]
        self.root_rho = np.array([self._model_radius(n.shape) for n in self.roots]
                                 ) if self.roots else np.zeros(0)
        self.root_centers = (np.array([n.shape.center for n in self.roots])
                             if self.roots else np.zeros((0, 2)))
        self.purge_entries = [self._make_entry(nid) for nid in w.purge_order()]

    def _extend_from(self, base: "TransformStack", node: ObstacleNode):
        self.boundary = base.boundary
        self.q0 = base.q0
        self.rho0 = base.rho0
        self.nodes = base.nodes + [node]
        self.node_pos = dict(base.node_pos)
        m_new = len(self.nodes) - 1
        self.node_pos[node.node_id] = m_new
        is_leaf = node.parent is not None
        if is_leaf:
            self.roots = base.roots
            self.root_rho = base.root_rho
            self.root_centers = base.root_centers
        else:
            self.roots = base.roots + [node]
            self.root_rho = np.append(base.root_rho,
                                      self._model_radius(node.shape))
            self.root_centers = np.vstack([base.root_centers,
                                           node.shape.center[None, :]])
        # every existing omitted product gains the new obstacle's column;
        # only a leaf joins the leaf products
        entries = [replace(e, idx_all=np.append(e.idx_all, m_new),
                           idx_leaves=(np.append(e.idx_leaves, m_new)
                                       if is_leaf else e.idx_leaves))
                   for e in base.purge_entries]
        if is_leaf:
            fresh = self._make_entry(node.node_id)
            fresh.self_index = m_new
            fresh.parent_index = self.node_pos[node.parent]
            fresh.idx_all = np.array(
                [j for j in range(len(self.nodes))
                 if j not in (m_new, fresh.parent_index)], dtype=int)
            fresh.idx_leaves = np.array(
                [j for j, n in enumerate(self.nodes)
                 if n.parent is not None and j != m_new], dtype=int)
            entries.append(fresh)
            entries.sort(key=lambda e: (e.root_order, -e.depth, e.node_id))
        self.purge_entries = entries
        self._extend_finalize(base, node)

    def _extend_finalize(self, base: "TransformStack", node: ObstacleNode):
        self.table = base.table.extended(node.shape)
        self.scale2 = base.scale2
        if node.parent is not None:
            # purge-only change: the sphere and point worlds are untouched
            self.lambda_eff = base.lambda_eff
            self.k_eff = base.k_eff
            self.point_images = base.point_images
            self.goal_image = base.goal_image
        else:
            p = self.params
            self.lambda_eff = p.switch_sharpness * self.scale2 \
                * (len(self.roots) + 1)
            self.k_eff = p.harmonic_gain + len(self.roots)
            self.point_images = self._psi(self.root_centers)
            self.goal_image = self.spheres_to_points(self.goal[None, :])[0]

    def _reindex_entries(self):
        """Recompute omitted-product index lists against the current table."""
        non_roots = [i for i, n in enumerate(self.nodes) if n.parent is not None]
        for e in self.purge_entries:
            i = e.self_index = self.node_pos[e.node_id]
            parent_id = self.world.nodes[e.node_id].parent
            e.parent_index = self.node_pos[parent_id]
            e.idx_all = np.array([j for j in range(len(self.nodes))
                                  if j not in (i, e.parent_index)], dtype=int)
            e.idx_leaves = np.array([j for j in non_roots if j != i], dtype=int)

    def _make_entry(self, node_id: int) -> PurgeEntry:
        node = self.world.nodes[node_id]
        parent = self.world.nodes[node.parent]
        root = node
        while root.parent is not None:
            root = self.world.nodes[root.parent]
        root_order = [r.node_id for r in self.roots].index(root.node_id)
        return PurgeEntry(
            node_id=node_id, leaf_shape=node.shape, parent_shape=parent.shape,
            common_center=node.common_center, margin=node.purge_margin,
            stiffness=node.purge_stiffness, root_order=root_order,
            depth=node.depth, idx_all=np.zeros(0, dtype=int),
            idx_leaves=np.zeros(0, dtype=int), self_index=0, parent_index=0)

    def _model_radius(self, shape: wd.Shape) -> float:
        """Model sphere radius: area preserving, capped just inside the
        inscribed radius so the sphere never swallows free space next to a
        thin obstacle."""
        by_area = float(np.sqrt(wd.shape_area(shape) / np.pi))
        if isinstance(shape, Circle):
            inradius = shape.radius
        else:
            inradius = float(np.min(shape.half_widths))
        return min(by_area, 0.95 * inradius)

    def _finalize(self):
        self._reindex_entries()
        self.table = _ShapeTable([n.shape for n in self.nodes])
        p = self.params
        self.scale2 = (2.0 * self.rho0) ** 2
        self.lambda_eff = p.switch_sharpness * self.scale2 * (len(self.roots) + 1)
        self.k_eff = p.harmonic_gain + len(self.roots)
        self.point_images = self._psi(self.root_centers) \
            if len(self.roots) else np.zeros((0, 2))
        self.goal_image = self.spheres_to_points(self.goal[None, :])[0]

    def with_obstacle(self, node: ObstacleNode) -> "TransformStack":
        """Stack over the world extended by one obstacle, reusing caches."""
        return TransformStack(self.world, self.goal, self.params,
                              _copy_from=self, _new_node=node)

    # -- shared low-level pieces ----------------------------------------

    def _gamma(self, pts: np.ndarray) -> np.ndarray:
        d = pts - self.goal
        return np.sum(d * d, axis=-1)

    def _window(self, beta_vals: np.ndarray) -> np.ndarray:
        return deformation_window(beta_vals, self.params.window_inner,
                                  self.params.window_outer)

    def purge_radial(self, entry: PurgeEntry, pts: np.ndarray,
                     betas: Optional[np.ndarray] = None):
        """Raw radial term (v-1)(q-p) of one purging map, its window factor
        and the leaf obstacle value."""
        if betas is None:
            b_leaf = wd.beta(entry.leaf_shape, pts)
            b_par = wd.beta(entry.parent_shape, pts)
        else:
            b_leaf = betas[:, entry.self_index]
            b_par = betas[:, entry.parent_index]
        d = pts - entry.common_center
        rn = np.maximum(np.linalg.norm(d, axis=-1), 1e-30)
        qhat = d / rn[:, None]
        rho = parent_ray_length(entry.parent_shape, entry.common_center, qhat)
        # saturated arguments keep the scaling bounded away from the leaf
        # without touching its zeros: the junction disk still maps radially
        # and the exposed leaf boundary still lands on the parent
        bp = saturated(b_par)
        shifted = saturated(b_leaf - 2.0 * entry.margin)
        kap = bp + shifted + np.sqrt(bp * bp + shifted * shifted)
        v = rho * (1.0 + b_leaf * kap) / rn
        radial = (v - 1.0)[:, None] * d
        return radial, self._window(b_leaf), b_leaf, b_par

    def purge_switch(self, entry: PurgeEntry, pts: np.ndarray,
                     betas: Optional[np.ndarray] = None,
                     b_leaf=None, b_par=None) -> np.ndarray:
        """Analytic switch of one purging map (saturated omitted product)."""
        if betas is None:
            betas = self.table.betas(pts)
        if b_leaf is None:
            b_leaf = betas[:, entry.self_index]
        if b_par is None:
            b_par = betas[:, entry.parent_index]
        sat = saturated(betas)
        omitted = np.prod(sat[:, entry.idx_all], axis=-1) \
            * np.prod(sat[:, entry.idx_leaves], axis=-1) \
            * saturated(self.junction_shield(entry, b_leaf, b_par))
        gamma = self._gamma(pts)
        return analytic_switch(gamma, omitted,
                               entry.stiffness * self.scale2, b_leaf)

    @staticmethod
    def junction_shield(entry: PurgeEntry, b_leaf: np.ndarray,
                        b_par: np.ndarray) -> np.ndarray:
        """Zero on the exposed parent boundary, positive near the junction;
        keeps the purge switch active where leaf and parent meet."""
        shifted = 2.0 * entry.margin - b_leaf
        return b_par + shifted + np.sqrt(b_par * b_par + shifted * shifted)

    def purge_step(self, index: int, pts: np.ndarray) -> np.ndarray:
        """Apply the purging map at one canonical position."""
        entry = self.purge_entries[index]
        betas = self.table.betas(pts)
        radial, win, b_leaf, b_par = self.purge_radial(entry, pts, betas)
        sig = self.purge_switch(entry, pts, betas, b_leaf, b_par)
        return pts + (sig * win)[:, None] * radial

    def purge_forest(self, pts: np.ndarray) -> np.ndarray:
        """Forest to star world: purge every leaf, deepest first per tree."""
        x = np.asarray(pts, dtype=float)
        for i in range(len(self.purge_entries)):
            x = self.purge_step(i, x)
        return x

    # -- star world to sphere world -------------------------------------

    def sphere_betas(self, pts: np.ndarray):
        """Transform-convention obstacle functions of the star world:
        boundary first (positive inside the workspace), then roots."""
        b0 = -wd.beta(self.boundary, pts)
        if len(self.roots) == 0:
            return b0, np.zeros((pts.shape[0], 0))
        broots = np.stack([wd.beta(n.shape, pts) for n in self.roots], axis=-1)
        return b0, broots

    def star_radials(self, pts: np.ndarray):
        """Raw radial terms and windows of the boundary and root scalings."""
        b0, br = self.sphere_betas(pts)
        d0 = pts - self.q0
        n0 = np.maximum(np.linalg.norm(d0, axis=-1), 1e-30)
        v0 = self.rho0 * (1.0 - b0) / n0
        radials = [(v0 - 1.0)[:, None] * d0]
        wins = [self._window(b0)]
        for j, node in enumerate(self.roots):
            dj = pts - node.shape.center
            nj = np.maximum(np.linalg.norm(dj, axis=-1), 1e-30)
            vj = self.root_rho[j] * (1.0 + br[:, j]) / nj
            radials.append((vj - 1.0)[:, None] * dj)
            wins.append(self._window(br[:, j]))
        return radials, wins, b0, br

    def star_switches(self, b0: np.ndarray, br: np.ndarray,
                      gamma: np.ndarray) -> np.ndarray:
        """(N, R+1) switches of the boundary and root scalings, built with
        division-free omitted products of saturated obstacle functions."""
        cols = np.concatenate([saturated(b0)[:, None], saturated(br)], axis=-1)
        n, m = cols.shape
        prefix = np.ones((n, m))
        suffix = np.ones((n, m))
        np.cumprod(cols[:, :-1], axis=-1, out=prefix[:, 1:])
        np.cumprod(cols[:, :0:-1], axis=-1, out=suffix[:, -2::-1])
        omitted = prefix * suffix
        own = np.concatenate([b0[:, None], br], axis=-1)
        return analytic_switch(gamma[:, None], omitted, self.lambda_eff, own)

    def stars_to_spheres(self, pts: np.ndarray) -> np.ndarray:
        x = np.asarray(pts, dtype=float)
        radials, wins, b0, br = self.star_radials(x)
        sig = self.star_switches(b0, br, self._gamma(x))
        out = x.copy()
        for j, (radial, win) in enumerate(zip(radials, wins)):
            out = out + (sig[:, j] * win)[:, None] * radial
        return out

    # -- sphere world to point world ------------------------------------

    def _contract(self, pts: np.ndarray) -> np.ndarray:
        if len(self.roots) == 0:
            return pts
        d = pts[:, None, :] - self.root_centers[None, :, :]
        b_sph = np.sum(d * d, axis=-1) / (self.root_rho ** 2) - 1.0
        s = smoothstep(b_sph / self.params.contraction_width)
        return pts + np.sum((1.0 - s)[..., None] * (-d), axis=1)

    def _psi(self, pts: np.ndarray) -> np.ndarray:
        d = pts - self.q0
        n = np.linalg.norm(d, axis=-1)
        denom = np.maximum(self.rho0 - n, 1e-12)
        return self.q0 + (self.rho0 / denom)[:, None] * d

    def spheres_to_points(self, pts: np.ndarray) -> np.ndarray:
        return self._psi(self._contract(np.asarray(pts, dtype=float)))

    def to_point_world(self, pts: np.ndarray) -> np.ndarray:
        """Full map composition at (N, 2) points."""
        return self.spheres_to_points(self.stars_to_spheres(
            self.purge_forest(pts)))

    # -- potential -------------------------------------------------------

    def free(self, pts: np.ndarray) -> np.ndarray:
        """Free-space test against the obstacle set frozen at build time."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ok = wd.beta(self.boundary, pts) < 0.0
        if self.nodes:
            ok = ok & np.all(self.table.betas(pts) > 0.0, axis=-1)
        return ok

    def point_potential(self, y: np.ndarray) -> np.ndarray:
        """Harmonic log potential in point-world coordinates."""
        with np.errstate(divide="ignore", invalid="ignore"):
            dg = np.sum((y - self.goal_image) ** 2, axis=-1)
            val = np.log(dg)
            if len(self.roots):
                di = np.sum((y[:, None, :] - self.point_images[None, :, :]) ** 2,
                            axis=-1)
                val = val - np.sum(np.log(di), axis=-1) / self.k_eff
        return val

    def squash(self, z: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            return self.params.potential_cap / (1.0 + np.exp(-z))

    def potential(self, pts: np.ndarray) -> np.ndarray:
        """Squashed navigation potential; the cap value outside free space."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        with np.errstate(all="ignore"):
            vals = self.squash(self.point_potential(self.to_point_world(pts)))
        vals = np.where(self.free(pts), vals, self.params.potential_cap)
        return np.where(np.isnan(vals), self.params.potential_cap, vals)

    def gradient(self, pts: np.ndarray, h: Optional[float] = None) -> np.ndarray:
        return self.potential_and_gradient(pts, h)[1]

    def potential_and_gradient(self, pts: np.ndarray,
                               h: Optional[float] = None):
        """Value and central-difference gradient in one stacked evaluation."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = pts.shape[0]
        if h is None:
            hs = 1e-6 * np.maximum(1.0, np.linalg.norm(pts, axis=-1))
        else:
            hs = np.full(n, float(h))
        e1 = np.stack([hs, np.zeros(n)], axis=-1)
        e2 = np.stack([np.zeros(n), hs], axis=-1)
        batch = np.concatenate([pts, pts + e1, pts - e1, pts + e2, pts - e2])
        vals = self.potential(batch)
        v0, vx1, vx2, vy1, vy2 = np.split(vals, 5)
        grad = np.stack([(vx1 - vx2) / (2.0 * hs), (vy1 - vy2) / (2.0 * hs)],
                        axis=-1)
        return v0, grad

    def map_jacobian_det(self, pts: np.ndarray,
                         h: float = 1e-6) -> np.ndarray:
        """Determinant of the numerical Jacobian of the full map."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = pts.shape[0]
        e1 = np.array([h, 0.0])
        e2 = np.array([0.0, h])
        batch = np.concatenate([pts + e1, pts - e1, pts + e2, pts - e2])
        img = self.to_point_world(batch)
        jx = (img[:n] - img[n:2 * n]) / (2.0 * h)
        jy = (img[2 * n:3 * n] - img[3 * n:]) / (2.0 * h)
        return jx[:, 0] * jy[:, 1] - jx[:, 1] * jy[:, 0]
