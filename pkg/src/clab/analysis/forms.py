"""Dirichlet forms over ordered pairs and the mollifier."""
from __future__ import annotations

import numpy as np

from clab.env.core import nearest_neighbor_edges
from clab.env.localize import LocalizedEnvironment
from clab.env.moments import nn_conductances
from clab.lattice import Geometry

VARIANTS = ("D", "D0", "D1", "DR", "DRk")


def dirichlet_form(obj, variant: str, f, kappa: float | None = None):
    """sum_{x,y} C_xy (f(y) - f(x))^2 over ordered pairs.

    ``D`` uses the environment, ``D0`` unit nearest-neighbour weights, ``D1``
    the environment restricted to nearest neighbours, ``DR`` the localized
    conductances and ``DRk`` those of length at most kappa R.  ``f`` may be a
    stack of functions (last axis = sites), giving one value per function.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown form {variant!r}; expected one of {VARIANTS}")
    f = np.asarray(f, dtype=float)
    if variant in ("DR", "DRk"):
        if not isinstance(obj, LocalizedEnvironment):
            raise ValueError(f"{variant} needs a LocalizedEnvironment")
        env = obj.env
        mask = None
        if variant == "DRk":
            if kappa is None:
                raise ValueError("DRk needs kappa")
            if not (0 < kappa <= 1 and kappa * obj.R >= 1):
                raise ValueError("DRk needs kappa in (0, 1] with kappa R >= 1")
            mask = obj.truncated(kappa)
        return _edge_form(env.u, env.v, env.w, f, mask)
    env = obj.base if isinstance(obj, LocalizedEnvironment) else obj
    if variant == "D":
        return _edge_form(env.u, env.v, env.w, f)
    u, v = nearest_neighbor_edges(env.geometry)
    w = np.ones(u.size) if variant == "D0" else nn_conductances(env)
    return _edge_form(u, v, w, f)


def simple_form(f, g: Geometry) -> float:
    """D0 for a function on the torus of geometry g."""
    u, v = nearest_neighbor_edges(g)
    return _edge_form(u, v, np.ones(u.size), np.asarray(f, dtype=float))


def _edge_form(u, v, w, f, mask=None) -> float:
    diff = f[..., v] - f[..., u]
    terms = w * diff**2
    if mask is not None:
        terms = np.where(mask, terms, 0.0)
    return 2.0 * terms.sum(axis=-1)


def mollifier(R: int, g: Geometry):
    """phi_R: 1 on B(0,4R), 0 off B(0,8R), linear in the sup norm between."""
    if not (R >= 1 and 8 * R < g.half):
        raise ValueError(f"mollifier needs 8R < side/2 (R={R}, side={g.side})")
    dist = g.sup_norm_from(0)
    phi = np.clip((8 * R - dist) / (4 * R), 0.0, 1.0)

    def evaluate(x=None):
        if x is None:
            return phi
        return float(phi[g.site(x)])

    return evaluate
