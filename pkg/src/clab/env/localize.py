"""Localization of an environment around the origin."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from clab.env.core import EnvError, Environment, nearest_neighbor_edges


@dataclass(frozen=True, eq=False)
class LocalizedEnvironment:
    """C^R and nu^R for radius R.

    C^R keeps every base edge touching B(0, 2R), puts unit conductance on
    nearest-neighbour pairs lying wholly outside, and drops everything else.
    nu^R is nu on B(0, 2R), 1 + nu on B(0, 4R) minus B(0, 2R), and 1 beyond.
    """

    base: Environment
    R: int
    env: Environment
    nuR: np.ndarray

    @property
    def geometry(self):
        return self.base.geometry

    def in_ball(self, radius: int) -> np.ndarray:
        return self.geometry.sup_norm_from(0) <= radius

    def truncated(self, kappa: float) -> np.ndarray:
        """Mask of C^R edges with Euclidean length <= kappa R."""
        return self.env.length2 <= (kappa * self.R) ** 2 + 1e-9


def localized_edges(env: Environment, R: int):
    """Edge arrays (u, v, w, |v - u|^2) of C^R and the weights nu^R, without
    building an Environment; cheap enough for bulk bound checks."""
    g = env.geometry
    if R < 1 or not 4 * R < g.half:
        raise EnvError(f"localization radius R={R} needs 1 <= R and 4R < side/2 = {g.half}")
    dist = g.sup_norm_from(0)
    inner = dist <= 2 * R
    keep = inner[env.u] | inner[env.v]
    nu_, nv_ = nearest_neighbor_edges(g)
    outside = ~inner[nu_] & ~inner[nv_]
    n_out = int(outside.sum())
    u = np.concatenate([env.u[keep], nu_[outside]])
    v = np.concatenate([env.v[keep], nv_[outside]])
    w = np.concatenate([env.w[keep], np.ones(n_out)])
    len2 = np.concatenate([env.length2[keep], np.ones(n_out)])
    nuR = np.where(inner, env.nu, np.where(dist <= 4 * R, 1.0 + env.nu, 1.0))
    return u, v, w, len2, nuR


def localize(env: Environment, R: int) -> LocalizedEnvironment:
    u, v, w, _, nuR = localized_edges(env, R)
    envR = Environment.from_edges(env.geometry, u, v, w,
                                  {"sampler": "localized", "R": R, "base": dict(env.meta)})
    nuR.setflags(write=False)
    return LocalizedEnvironment(env, R, envR, nuR)
