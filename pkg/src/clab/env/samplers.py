"""Environment samplers: constant, i.i.d. nearest-neighbour, long-range
percolation, stable-like conductances, and planted long edges."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from clab import rng as _rng
from clab.env.core import EnvError, Environment, nearest_neighbor_edges
from clab.lattice import Geometry


@dataclass(frozen=True)
class Marginal:
    """Law of a single nearest-neighbour conductance.

    ``kind`` is one of ``point`` (params: value), ``uniform`` (low, high),
    ``lognormal`` (mu, sigma) or ``twopoint`` (a, b, prob_a).
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        k, p = self.kind, self.params
        arity = {"point": 1, "uniform": 2, "lognormal": 2, "twopoint": 3}
        if k not in arity:
            raise EnvError(f"unknown marginal {k!r}")
        if len(p) != arity[k]:
            raise EnvError(f"marginal {k} takes {arity[k]} parameters, got {len(p)}")
        if k == "point" and not p[0] > 0:
            raise EnvError("point mass must sit in (0, inf)")
        if k == "uniform" and not 0 < p[0] <= p[1]:
            raise EnvError("uniform marginal must satisfy 0 < low <= high")
        if k == "lognormal" and not p[1] >= 0:
            raise EnvError("lognormal sigma must be nonnegative")
        if k == "twopoint" and not (p[0] > 0 and p[1] > 0 and 0 <= p[2] <= 1):
            raise EnvError("two-point marginal needs positive atoms and prob in [0,1]")

    @classmethod
    def parse(cls, text) -> "Marginal":
        """Parse ``"uniform:1,2"`` style strings (or pass a Marginal through)."""
        if isinstance(text, Marginal):
            return text
        if isinstance(text, dict):
            return cls(text["kind"], tuple(float(v) for v in text["params"]))
        kind, _, rest = str(text).partition(":")
        params = tuple(float(t) for t in rest.split(",") if t.strip())
        return cls(kind.strip(), params)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        k, p = self.kind, self.params
        if k == "point":
            return np.full(size, p[0])
        if k == "uniform":
            return rng.uniform(p[0], p[1], size)
        if k == "lognormal":
            return rng.lognormal(p[0], p[1], size)
        return np.where(rng.random(size) < p[2], p[0], p[1])

    def describe(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}


def constant(g: Geometry, value: float = 1.0) -> Environment:
    u, v = nearest_neighbor_edges(g)
    return Environment.from_edges(
        g, u, v, np.full(u.size, float(value)),
        {"sampler": "constant", "params": {"value": value}, "seed": None},
    )


def sample_iid_nn(dist, g: Geometry, seed: int) -> Environment:
    m = Marginal.parse(dist)
    u, v = nearest_neighbor_edges(g)
    w = m.draw(_rng.stream(seed, "iid-nn"), u.size)
    return Environment.from_edges(
        g, u, v, w, {"sampler": "iid-nn", "params": {"dist": m.describe()}, "seed": seed}
    )


# -- long-range pair sampling ---------------------------------------------------


@lru_cache(maxsize=8)
def _half_vectors(d: int, side: int, r_max: float | None = None):
    """Canonical half of the admissible long jumps, grouped by squared length.

    Admissible: every component strictly inside (-side/2, side/2), Euclidean
    length in (1, min(side/2, r_max)].  Of v and -v only the lexicographically positive one
    is kept, so each unordered pair of sites is produced exactly once.
    """
    h = side // 2
    cap = h if r_max is None else min(h, r_max)
    r = np.arange(-min(h - 1, int(cap)), min(h - 1, int(cap)) + 1)
    vecs = np.stack(np.meshgrid(*([r] * d), indexing="ij"), axis=-1).reshape(-1, d)
    n2 = (vecs**2).sum(axis=1)
    nz = vecs != 0
    first = np.argmax(nz, axis=1)
    lexpos = vecs[np.arange(len(vecs)), first] > 0
    keep = (n2 > 1) & (n2 <= cap * cap) & lexpos
    vecs, n2 = vecs[keep], n2[keep]
    order = np.argsort(n2, kind="stable")
    vecs, n2 = vecs[order], n2[order]
    levels, starts = np.unique(n2, return_index=True)
    bounds = np.append(starts, len(n2))
    return vecs, levels, bounds


def _bernoulli_positions(total: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Indices in [0, total) of successes of i.i.d. Bernoulli(p) trials."""
    if p <= 0 or total <= 0:
        return np.empty(0, dtype=np.int64)
    if p >= 0.2 or total < 256:
        return np.flatnonzero(rng.random(total) < p)
    # geometric gaps between successes; exact for any p in (0, 1)
    mean = total * p
    chunk = int(mean + 6 * np.sqrt(mean) + 16)
    out, cur = [], -1
    while True:
        c = cur + np.cumsum(rng.geometric(p, size=chunk))
        out.append(c[c < total])
        if c[-1] >= total:
            break
        cur = int(c[-1])
    return np.concatenate(out)


def _long_pairs(g: Geometry, prob_of_length, rng: np.random.Generator, r_max=None):
    """Independent long edges: each admissible pair {x, x+v} kept w.p. prob(|v|)."""
    vecs, levels, bounds = _half_vectors(g.d, g.side, r_max)
    n = g.n_sites
    us, vs, lens = [], [], []
    coords = g.all_coords
    for j, lev in enumerate(levels):
        a, b = bounds[j], bounds[j + 1]
        p = float(prob_of_length(np.sqrt(lev)))
        k = _bernoulli_positions((b - a) * n, p, rng)
        if k.size == 0:
            continue
        site = k % n
        vec = vecs[a + k // n]
        us.append(site)
        vs.append(g.index(coords[site] + vec))
        lens.append(np.full(site.size, np.sqrt(lev)))
    if not us:
        e = np.empty(0, dtype=np.int64)
        return e, e, np.empty(0)
    return np.concatenate(us), np.concatenate(vs), np.concatenate(lens)


def lrp_profile(r, s: float, beta: float = 1.0):
    """Connection probability at Euclidean distance r > 1: min(1, beta r^-s)."""
    r = np.asarray(r, dtype=float)
    return np.minimum(1.0, beta * r ** (-s))


def sample_lrp(s: float, g: Geometry, seed: int, beta: float = 1.0) -> Environment:
    """Long-range percolation: zero-one conductances, nearest-neighbour edges
    always open, a pair at distance r > 1 open w.p. min(1, beta r^-s)."""
    if not s > g.d:
        raise EnvError(f"decay exponent s={s} must exceed d={g.d}")
    if beta < 0:
        raise EnvError("beta must be nonnegative")
    lu, lv = sample_lrp_long_edges(s, g, seed, beta)
    nu_, nv_ = nearest_neighbor_edges(g)
    u = np.concatenate([nu_, lu])
    v = np.concatenate([nv_, lv])
    return Environment.from_edges(
        g, u, v, np.ones(u.size),
        {"sampler": "lrp", "params": {"s": s, "beta": beta}, "seed": seed},
    )


def sample_lrp_long_edges(s: float, g: Geometry, seed: int, beta: float = 1.0):
    """Only the long (non nearest-neighbour) edges of ``sample_lrp`` with the same
    seed, as (u, v) index arrays; cheap enough for tori with millions of sites."""
    if not s > g.d:
        raise EnvError(f"decay exponent s={s} must exceed d={g.d}")
    if beta < 0:
        raise EnvError("beta must be nonnegative")
    rng = _rng.stream(seed, "lrp")
    lu, lv, _ = _long_pairs(g, lambda r: lrp_profile(r, s, beta), rng)
    return lu, lv


def sample_stable_like(s: float, g: Geometry, seed: int, rho: float = 0.5,
                       r_max: float = 8.0) -> Environment:
    """C_xy = xi_xy |x-y|^-(d+s) with xi i.i.d. Bernoulli(rho), xi = 1 on
    nearest-neighbour pairs.

    Jumps longer than ``r_max`` are dropped: with i.i.d. xi every site would
    otherwise be joined to a fixed fraction of the whole torus.
    """
    if not s > 2:
        raise EnvError(f"stable-like exponent s={s} must exceed 2")
    if not 0 <= rho <= 1:
        raise EnvError("rho must lie in [0, 1]")
    rng = _rng.stream(seed, "stable-like")
    if not r_max > 1:
        raise EnvError("r_max must exceed 1")
    lu, lv, lens = _long_pairs(g, lambda r: rho, rng, float(r_max))
    nu_, nv_ = nearest_neighbor_edges(g)
    u = np.concatenate([nu_, lu])
    v = np.concatenate([nv_, lv])
    w = np.concatenate([np.ones(nu_.size), lens ** (-(g.d + s))])
    return Environment.from_edges(
        g, u, v, w,
        {"sampler": "stable-like", "params": {"s": s, "rho": rho, "r_max": r_max},
         "seed": seed},
    )


def plant_long_edge(env: Environment, x, y) -> Environment:
    """Force the event A(x, y): open the edge x-y with conductance 1 and close
    every other non-nearest-neighbour edge at y."""
    g = env.geometry
    xi, yi = g.site(x), g.site(y)
    dv = g.reduce(g.coords(yi) - g.coords(xi))
    if (dv**2).sum() <= 1:
        raise EnvError("planted edge endpoints must be at distance > 1")
    at_y = (env.u == yi) | (env.v == yi)
    long = env.length2 > 1
    pair = ((env.u == min(xi, yi)) & (env.v == max(xi, yi)))
    drop = (at_y & long) | pair
    u = np.append(env.u[~drop], min(xi, yi))
    v = np.append(env.v[~drop], max(xi, yi))
    w = np.append(env.w[~drop], 1.0)
    planted = list(env.meta.get("planted_edges", [])) + [[int(xi), int(yi)]]
    return env.with_edges(u, v, w, planted_edges=planted)
