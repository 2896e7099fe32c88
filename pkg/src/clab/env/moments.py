"""Empirical moment diagnostics: torus averages stand in for expectations."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from clab.env.core import EnvError, Environment, nearest_neighbor_edges


@dataclass(frozen=True)
class MomentReport:
    p: float
    q: float
    nu_p_norm: float
    inv_c_q_norm: float
    mean_pi: float
    mean_nu: float
    criterion: bool  # 1/p + 1/q < 2/d

    def as_dict(self) -> dict:
        return asdict(self)


def nn_conductances(env: Environment) -> np.ndarray:
    """Conductance of every nearest-neighbour torus edge (0 where absent)."""
    g = env.geometry
    u, v = nearest_neighbor_edges(g)
    a, b = np.minimum(u, v), np.maximum(u, v)
    key = env.u * g.n_sites + env.v
    want = a * g.n_sites + b
    pos = np.searchsorted(key, want)
    pos = np.minimum(pos, key.size - 1)
    hit = key[pos] == want
    return np.where(hit, env.w[pos], 0.0)


def moment_report(env: Environment, p: float, q: float) -> MomentReport:
    if p < 1 or q < 1:
        raise EnvError("moment exponents must be >= 1")
    c = nn_conductances(env)
    if np.any(c <= 0):
        raise EnvError("a nearest-neighbour conductance vanishes; the q-moment is infinite")
    d = env.geometry.d
    return MomentReport(
        p=p,
        q=q,
        nu_p_norm=float(np.mean(env.nu**p) ** (1 / p)),
        inv_c_q_norm=float(np.mean(c ** (-q)) ** (1 / q)),
        mean_pi=float(env.pi.mean()),
        mean_nu=float(env.nu.mean()),
        criterion=bool(1 / p + 1 / q < 2 / d),
    )
