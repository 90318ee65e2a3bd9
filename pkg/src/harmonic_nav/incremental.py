"""Incremental potential updates as obstacles are discovered.

``IncrementalState`` keeps the potential of a growing world without full
recomputation: inserting an obstacle extends the cached transform stack in
place of rebuilding it, and field queries run through switch-term
recursions that carry each scaling term from the previous level instead of
reassembling its omitted product from scratch.  Both routes evaluate the
same construction, so their values agree to floating-point error; tests
and benchmarks compare them directly.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import world as wd
from .errors import DegenerateSwitchTerm
from .transforms import TransformParams, TransformStack, saturated

_TINY = 1e-14


def switch_term_update(term: np.ndarray, radial_from: np.ndarray,
                       radial_to: np.ndarray, ratio: np.ndarray) -> np.ndarray:
    """Carry a switch term across one level change.

    ``term`` is the current switch-weighted radial vector sigma*r.  Given
    the raw radial vectors before and after the change and the ratio by
    which the switch balance shifts, the updated term is

        |term| * radial_to / (ratio * (|radial_from| - |term|) + |term|)

    Raises DegenerateSwitchTerm where the source radial vanishes while the
    term is needed, since sigma cannot be recovered there.
    """
    term = np.atleast_2d(term)
    radial_from = np.atleast_2d(radial_from)
    radial_to = np.atleast_2d(radial_to)
    nf = np.linalg.norm(term, axis=-1)
    nr = np.linalg.norm(radial_from, axis=-1)
    if np.any(nr < _TINY):
        raise DegenerateSwitchTerm("source radial term vanished")
    denom = ratio * (nr - nf) + nf
    if np.any(denom <= 0.0):
        raise DegenerateSwitchTerm("switch balance lost positivity")
    return (nf / denom)[:, None] * radial_to


def _pair_update(sigma, comp, ratio):
    """Carry a switch value and its complement across one level change.

    Equivalent to switch_term_update on the weighted radial vectors, but
    free of the cancellation that loses precision as sigma approaches one.
    Returns the updated pair and a mask of points needing direct recompute.
    """
    scaled = ratio * comp
    denom = scaled + sigma
    bad = ~np.isfinite(denom) | (denom <= 0.0)
    safe = np.where(bad, 1.0, denom)
    return sigma / safe, scaled / safe, bad


def _switch_pair(gamma, omitted, stiffness, beta_own):
    """Direct switch value and complement of one scaling term."""
    num = gamma * omitted
    den = num + stiffness * beta_own
    return num / den, stiffness * beta_own / den


class IncrementalState:
    """Potential over a discovered world, extended one obstacle at a time.

    Beyond the stack extension, a state can keep per-query buffers: after
    ``prime(pts)`` the switch terms, scaling radials and intermediate maps
    at those points are cached, and a successor state created by
    ``add_obstacle`` can produce the updated potential at the same points
    through ``refresh_from`` without re-deriving the full composition.
    """

    def __init__(self, stack: TransformStack):
        self.stack = stack
        self.world = stack.world
        self.goal = stack.goal
        self.params = stack.params
        self._cache = None

    @classmethod
    def from_world(cls, forest: wd.ForestWorld, goal: np.ndarray,
                   params: TransformParams = TransformParams()
                   ) -> "IncrementalState":
        return cls(TransformStack(forest, goal, params))

    def add_obstacle(self, shape: wd.Shape,
                     purge_stiffness: Optional[float] = None,
                     purge_margin: Optional[float] = None
                     ) -> "IncrementalState":
        """Insert a newly observed obstacle and extend the cached stack."""
        kwargs = {}
        if purge_stiffness is not None:
            kwargs["purge_stiffness"] = purge_stiffness
        if purge_margin is not None:
            kwargs["purge_margin"] = purge_margin
        node = self.world.insert_obstacle(shape, **kwargs)
        return self.extend_with(node)

    def extend_with(self, node: wd.ObstacleNode) -> "IncrementalState":
        """Absorb an obstacle already inserted into this state's world."""
        return IncrementalState(self.stack.with_obstacle(node))

    def refine_obstacle(self, node_id: int, shape: wd.Shape
                        ) -> "IncrementalState":
        """Replace an obstacle estimate; refinement rebuilds the stack."""
        self.world.refine_obstacle(node_id, shape)
        return IncrementalState(TransformStack(self.world, self.goal,
                                               self.params))

    @property
    def last_node(self) -> Optional[wd.ObstacleNode]:
        return self.stack.nodes[-1] if self.stack.nodes else None

    # -- primed query buffers --------------------------------------------

    def prime(self, pts: np.ndarray) -> np.ndarray:
        """Evaluate the potential at pts and keep the per-point buffers."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        st = self.stack
        with np.errstate(all="ignore"):
            purged = st.purge_forest(pts)
            radials, wins, b0, br = st.star_radials(purged)
            gamma = st._gamma(purged)
            cols = np.concatenate([saturated(b0)[:, None], saturated(br)],
                                  axis=-1)
            n, m = cols.shape
            prefix = np.ones((n, m))
            suffix = np.ones((n, m))
            np.cumprod(cols[:, :-1], axis=-1, out=prefix[:, 1:])
            np.cumprod(cols[:, :0:-1], axis=-1, out=suffix[:, -2::-1])
            own = np.concatenate([b0[:, None], br], axis=-1)
            sig, comp = _switch_pair(gamma[:, None], prefix * suffix,
                                     st.lambda_eff, own)
            star = purged.copy()
            for j in range(m):
                star = star + (sig[:, j] * wins[j])[:, None] * radials[j]
            wins = np.stack(wins, axis=-1)
            radials = np.stack(radials, axis=1)
            y = st.spheres_to_points(star)
            vals = st.squash(st.point_potential(y))
        free = st.free(pts)
        vals = np.where(free, vals, self.params.potential_cap)
        vals = np.where(np.isnan(vals), self.params.potential_cap, vals)
        self._cache = {"pts": pts, "purged": purged, "gamma": gamma,
                       "cols": cols, "own": own,
                       "col_prod": np.prod(cols, axis=-1),
                       "sig": sig, "comp": comp, "wins": wins,
                       "radials": radials, "star": star, "free": free}
        return vals

    def refresh_from(self, base: "IncrementalState") -> np.ndarray:
        """Updated potential at the base state's primed points.

        This state must extend the base by exactly one obstacle.  An
        independent star reuses every buffer: the purge images stand, each
        switch term is carried across the level change, and only the new
        scaling is computed fresh.  A leaf changes the purge composition
        itself, so the points are re-primed from scratch.
        """
        cache = base._cache
        if cache is None:
            raise ValueError("base state was never primed")
        node = self.stack.nodes[-1]
        if node.parent is not None:
            return self.prime(cache["pts"])
        st = self.stack
        purged = cache["purged"]
        gamma = cache["gamma"]
        with np.errstate(all="ignore"):
            b_new = wd.beta(node.shape, purged)
            sat_new = saturated(b_new)
            d = purged - node.shape.center
            nn = np.maximum(np.linalg.norm(d, axis=-1), 1e-30)
            rho = st.root_rho[-1]
            radial_new = (rho * (1.0 + b_new) / nn - 1.0)[:, None] * d
            win_new = st._window(b_new)

            ratio = st.lambda_eff / (base.stack.lambda_eff * sat_new)
            sig, comp, bad = _pair_update(cache["sig"], cache["comp"],
                                          ratio[:, None])
            rows = bad.any(axis=-1)
            if rows.any():
                cols_r = np.concatenate([cache["cols"][rows],
                                         sat_new[rows, None]], axis=-1)
                n_r, m_r = cols_r.shape
                prefix = np.ones((n_r, m_r))
                suffix = np.ones((n_r, m_r))
                np.cumprod(cols_r[:, :-1], axis=-1, out=prefix[:, 1:])
                np.cumprod(cols_r[:, :0:-1], axis=-1, out=suffix[:, -2::-1])
                ds, dc = _switch_pair(gamma[rows, None],
                                      (prefix * suffix)[:, :-1],
                                      st.lambda_eff, cache["own"][rows])
                sig[rows] = np.where(bad[rows], ds, sig[rows])
                comp[rows] = np.where(bad[rows], dc, comp[rows])

            num = gamma * cache["col_prod"]
            den = num + st.lambda_eff * b_new
            sig_new = num / den
            comp_new = st.lambda_eff * b_new / den

            star = cache["star"] \
                + np.sum(((sig - cache["sig"]) * cache["wins"])[..., None]
                         * cache["radials"], axis=1) \
                + (win_new * sig_new)[:, None] * radial_new
            y = st.spheres_to_points(star)
            vals = st.squash(st.point_potential(y))
        free = cache["free"] & (wd.beta(node.shape, cache["pts"]) > 0.0)
        vals = np.where(free, vals, self.params.potential_cap)
        vals = np.where(np.isnan(vals), self.params.potential_cap, vals)
        self._cache = {
            "pts": cache["pts"], "purged": purged, "gamma": gamma,
            "cols": np.concatenate([cache["cols"], sat_new[:, None]], -1),
            "own": np.concatenate([cache["own"], b_new[:, None]], -1),
            "col_prod": cache["col_prod"] * sat_new,
            "sig": np.concatenate([sig, sig_new[:, None]], -1),
            "comp": np.concatenate([comp, comp_new[:, None]], -1),
            "wins": np.concatenate([cache["wins"], win_new[:, None]], -1),
            "radials": np.concatenate([cache["radials"],
                                       radial_new[:, None, :]], axis=1),
            "star": star, "free": free}
        return vals

    # -- recursive evaluation route --------------------------------------

    def _level_stiffness(self, k: int) -> float:
        p = self.params
        return p.switch_sharpness * self.stack.scale2 * (k + 1)

    def _star_image(self, pts: np.ndarray) -> np.ndarray:
        """Star-to-sphere map with switch terms chained over root levels."""
        with np.errstate(all="ignore"):
            return self._star_image_inner(pts)

    def _star_image_inner(self, pts: np.ndarray) -> np.ndarray:
        st = self.stack
        radials, wins, b0, br = st.star_radials(pts)
        gamma = st._gamma(pts)
        nroots = len(st.roots)
        sat_b0 = saturated(b0)
        sat_br = saturated(br) if nroots else np.zeros_like(br)
        own = [b0] + [br[:, j] for j in range(nroots)]

        s0, c0 = self._direct_star_pair(0, 0, gamma, own[0], sat_b0, sat_br)
        sigmas, comps = [s0], [c0]
        for k in range(nroots):
            ratio = self._level_stiffness(k + 1) / (
                self._level_stiffness(k) * sat_br[:, k])
            for j in range(len(sigmas)):
                sj, cj, bad = _pair_update(sigmas[j], comps[j], ratio)
                if np.any(bad):
                    ds, dc = self._direct_star_pair(
                        j, k + 1, gamma[bad], own[j][bad], sat_b0[bad],
                        sat_br[bad])
                    sj[bad], cj[bad] = ds, dc
                sigmas[j], comps[j] = sj, cj
            sn, cn = self._direct_star_pair(k + 1, k + 1, gamma, own[k + 1],
                                            sat_b0, sat_br)
            sigmas.append(sn)
            comps.append(cn)

        out = pts.copy()
        for j in range(len(sigmas)):
            out = out + (wins[j] * sigmas[j])[:, None] * radials[j]
        return out

    def _direct_star_pair(self, j: int, level: int, gamma, own_beta,
                          sat_b0, sat_br):
        """Direct switch pair of scaling j with the first ``level`` roots
        present; j=0 is the boundary."""
        cols = [sat_b0] + [sat_br[..., i] for i in range(level)]
        omitted = np.ones_like(gamma)
        for i, c in enumerate(cols):
            if i != j:
                omitted = omitted * c
        return _switch_pair(gamma, omitted, self._level_stiffness(level),
                            own_beta)

    def _purge_image(self, pts: np.ndarray) -> np.ndarray:
        """Forest-to-star map with each switch term reached by chaining
        from the first purge entry at the current intermediate points."""
        with np.errstate(all="ignore"):
            return self._purge_image_inner(pts)

    def _purge_image_inner(self, pts: np.ndarray) -> np.ndarray:
        st = self.stack
        entries = st.purge_entries
        x = pts
        for c in range(len(entries)):
            betas = st.table.betas(x)
            gamma = st._gamma(x)
            sat = saturated(betas)
            radial, win, b_leaf, b_par = st.purge_radial(entries[0], x, betas)
            shield = saturated(TransformStack.junction_shield(
                entries[0], b_leaf, b_par))
            sigma, comp = self._direct_purge_pair(entries[0], gamma, sat,
                                                  shield, b_leaf)
            prev_leaf, prev_shield = b_leaf, shield
            prev_sat_self = sat[:, entries[0].self_index]
            prev_sat_parent = sat[:, entries[0].parent_index]
            for m in range(c):
                nxt = entries[m + 1]
                radial, win, bl_n, bp_n = st.purge_radial(nxt, x, betas)
                shield_n = saturated(TransformStack.junction_shield(
                    nxt, bl_n, bp_n))
                sat_self_n = sat[:, nxt.self_index]
                sat_parent_n = sat[:, nxt.parent_index]
                # omitted-product ratio of entry m over entry m+1
                num = sat_self_n ** 2 * sat_parent_n * prev_shield
                den = prev_sat_self ** 2 * prev_sat_parent * shield_n
                ratio = (nxt.stiffness / entries[m].stiffness) \
                    * (bl_n / prev_leaf) * (num / den)
                sigma, comp, bad = _pair_update(sigma, comp, ratio)
                if np.any(bad):
                    ds, dc = self._direct_purge_pair(nxt, gamma[bad],
                                                     sat[bad], shield_n[bad],
                                                     bl_n[bad])
                    sigma[bad], comp[bad] = ds, dc
                prev_leaf, prev_shield = bl_n, shield_n
                prev_sat_self, prev_sat_parent = sat_self_n, sat_parent_n
            x = x + (win * sigma)[:, None] * radial
        return x

    def _direct_purge_pair(self, entry, gamma, sat, shield, b_leaf):
        omitted = np.prod(sat[:, entry.idx_all], axis=-1) \
            * np.prod(sat[:, entry.idx_leaves], axis=-1) * shield
        return _switch_pair(gamma, omitted, entry.stiffness * self.stack.scale2,
                            b_leaf)

    def point_potential_chain(self, y: np.ndarray) -> np.ndarray:
        """Harmonic potential built one point obstacle at a time."""
        st = self.stack
        with np.errstate(divide="ignore", invalid="ignore"):
            log_goal = np.log(np.sum((y - st.goal_image) ** 2, axis=-1))
            val = log_goal
            k_run = self.params.harmonic_gain
            for i in range(len(st.roots)):
                log_i = np.log(np.sum((y - st.point_images[i]) ** 2, axis=-1))
                val = (log_goal - log_i) / (k_run + 1.0) \
                    + k_run / (k_run + 1.0) * val
                k_run += 1.0
        return val

    def to_point_world(self, pts: np.ndarray) -> np.ndarray:
        return self.stack.spheres_to_points(self._star_image(
            self._purge_image(np.asarray(pts, dtype=float))))

    def potential(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        st = self.stack
        with np.errstate(all="ignore"):
            vals = st.squash(self.point_potential_chain(self.to_point_world(pts)))
        vals = np.where(st.free(pts), vals, self.params.potential_cap)
        return np.where(np.isnan(vals), self.params.potential_cap, vals)

    def gradient(self, pts: np.ndarray) -> np.ndarray:
        return self.potential_and_gradient(pts)[1]

    def potential_and_gradient(self, pts: np.ndarray):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = pts.shape[0]
        hs = 1e-6 * np.maximum(1.0, np.linalg.norm(pts, axis=-1))
        e1 = np.stack([hs, np.zeros(n)], axis=-1)
        e2 = np.stack([np.zeros(n), hs], axis=-1)
        batch = np.concatenate([pts, pts + e1, pts - e1, pts + e2, pts - e2])
        vals = self.potential(batch)
        v0, vx1, vx2, vy1, vy2 = np.split(vals, 5)
        grad = np.stack([(vx1 - vx2) / (2.0 * hs), (vy1 - vy2) / (2.0 * hs)],
                        axis=-1)
        return v0, grad
