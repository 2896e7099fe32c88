"""Nearest-neighbour trap environments.

Rare segments of length L along the first axis carry conductance b_L on their
interior edges and a_L on every other edge touching them; the scale of the
segment rooted at x is L_{ell(x)}, and a segment is installed only where the
trap flag m(x) < ell(x) is set.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from clab import rng as _rng
from clab.env.core import EnvError, Environment, nearest_neighbor_edges
from clab.lattice import Geometry


def default_schedule(k_max: int) -> tuple[int, ...]:
    return tuple(3 ** (k - 1) for k in range(1, k_max + 1))


def trap_a(L, d: int, q_prime: float):
    return np.asarray(L, dtype=float) ** (-(d - 1) / q_prime)


def trap_b(L, d: int, p_prime: float):
    return np.asarray(L, dtype=float) ** ((d - 1) / p_prime)


@dataclass(frozen=True)
class TrapSpec:
    d: int
    p: float
    q: float
    p_prime: float
    q_prime: float
    schedule: tuple[int, ...] = field(default_factory=lambda: default_schedule(3))

    def __post_init__(self):
        d = self.d
        if d < 3:
            raise EnvError("trap environments need d >= 3")
        crit = 2.0 / (d - 1)
        if not (self.p >= 1 and self.q >= 1 and 1 / self.p + 1 / self.q > crit):
            raise EnvError(f"need p, q >= 1 with 1/p + 1/q > {crit}")
        if not (self.p_prime > self.p and self.q_prime > self.q):
            raise EnvError("need p' > p and q' > q")
        if not 1 / self.p_prime + 1 / self.q_prime > crit:
            raise EnvError(f"need 1/p' + 1/q' > {crit}")
        L = self.schedule
        if not L or L[0] != 1:
            raise EnvError("schedule must start with L_1 = 1")
        if any(L[k + 1] <= 2 * L[k] for k in range(len(L) - 1)):
            raise EnvError("schedule must satisfy L_{k+1} > 2 L_k")

    @property
    def k_max(self) -> int:
        return len(self.schedule)

    def L(self, k: int) -> int:
        return self.schedule[k - 1]

    def a(self, L):
        return trap_a(L, self.d, self.q_prime)

    def b(self, L):
        return trap_b(L, self.d, self.p_prime)

    def check_fits(self, g: Geometry, k: int | None = None) -> None:
        L = self.L(k or self.k_max)
        if g.d != self.d:
            raise EnvError(f"spec is for d={self.d}, geometry has d={g.d}")
        if not 6 * L + 2 < g.side:
            raise EnvError(f"scale L={L} does not fit a torus of side {g.side}")


def lambda_offsets(L: int, d: int) -> np.ndarray:
    """Offsets j e_1 + z, |j| <= 3L, z in {0, +-e_2, ..., +-e_d}, minus the origin."""
    lat = [np.zeros(d, dtype=np.int64)]
    for i in range(1, d):
        for sgn in (1, -1):
            e = np.zeros(d, dtype=np.int64)
            e[i] = sgn
            lat.append(e)
    out = []
    for j in range(-3 * L, 3 * L + 1):
        for z in lat:
            o = z.copy()
            o[0] += j
            if o.any():
                out.append(o)
    return np.array(out)


def segment_edges(x: int, L: int, g: Geometry) -> tuple[np.ndarray, np.ndarray]:
    """Edge ids of E_L(x) split into (interior, fringe).

    Edge id ``axis * n_sites + site`` names the edge site -> site + e_axis,
    matching the order of ``nearest_neighbor_edges``.
    """
    n = g.n_sites
    c = g.coords(x)
    seg = g.index(c + np.outer(np.arange(L + 1), np.eye(g.d, dtype=np.int64)[0]))
    interior = seg[:-1]  # axis 0
    fringe_ids = [g.shift(x, -np.eye(g.d, dtype=np.int64)[0]), seg[-1]]
    for i in range(1, g.d):
        e = np.zeros(g.d, dtype=np.int64)
        e[i] = 1
        fringe_ids.extend((i * n + seg).tolist())
        fringe_ids.extend((i * n + g.shift(seg, -e)).tolist())
    return np.asarray(interior, dtype=np.int64), np.asarray(fringe_ids, dtype=np.int64)


@dataclass(eq=False)
class TrapFieldTrace:
    spec: TrapSpec
    xi: np.ndarray        # (k_max, n_sites) bool
    ell: np.ndarray       # (n_sites,) int
    m: np.ndarray         # (n_sites,) int
    flag: np.ndarray      # (n_sites,) bool, m < ell
    segments: dict        # flagged site -> (scale index, interior ids, fringe ids)
    conflicts: int = 0

    def flagged(self) -> np.ndarray:
        return np.flatnonzero(self.flag)


def ell_from_xi(xi: np.ndarray) -> np.ndarray:
    """Largest k with xi_k = 1 (xi indexed from k = 1 along axis 0)."""
    k = xi.shape[0]
    rev = xi[::-1]
    return (k - np.argmax(rev, axis=0)).astype(np.int64)


def _draw_xi(spec: TrapSpec, n: int, seed: int) -> np.ndarray:
    xi = np.ones((spec.k_max, n), dtype=bool)
    for k in range(2, spec.k_max + 1):
        u = _rng.stream(seed, "trap-xi", k).random(n)
        xi[k - 1] = u < float(spec.L(k)) ** (-spec.d)
    return xi


def compute_m(ell: np.ndarray, spec: TrapSpec, g: Geometry) -> np.ndarray:
    """m(x): largest k with max over Lambda_{L_k} of ell(x + .) >= k."""
    grid = ell.reshape((g.side,) * g.d)
    lateral = np.zeros_like(grid)
    for i in range(1, g.d):
        for sgn in (1, -1):
            lateral = np.maximum(lateral, np.roll(grid, -sgn, axis=i))
    full = np.maximum(lateral, grid)
    # running max along axis 0 over |j| <= 3L, the j = 0 column excluding x itself
    m = np.ones_like(grid)
    run = lateral.copy()
    j = 0
    for k in range(1, spec.k_max + 1):
        reach = 3 * spec.L(k)
        while j < reach:
            j += 1
            run = np.maximum(run, np.roll(full, -j, axis=0))
            run = np.maximum(run, np.roll(full, j, axis=0))
        m = np.where(run >= k, k, m)
    return m.reshape(-1)


def _assign(g: Geometry, spec: TrapSpec, roots, scales):
    """Conductance per nearest-neighbour edge id; counts double assignments."""
    n = g.n_sites
    w = np.ones(g.d * n)
    owner = np.full(g.d * n, -1, dtype=np.int64)
    conflicts = 0
    segments = {}
    for x, k in zip(roots, scales):
        L = spec.L(int(k))
        inner, fringe = segment_edges(int(x), L, g)
        ids = np.concatenate([inner, fringe])
        clash = owner[ids] >= 0
        if clash.any():
            conflicts += int(clash.sum())
        owner[ids] = x
        w[inner] = spec.b(L)
        w[fringe] = spec.a(L)
        segments[int(x)] = (int(k), inner, fringe)
    return w, segments, conflicts


def sample_trap(spec: TrapSpec, g: Geometry, seed: int, strict: bool = True):
    """Sample the trap environment and its full trace.

    With ``strict`` a double assignment of any edge raises; otherwise the
    count is recorded in the trace.
    """
    spec.check_fits(g)
    n = g.n_sites
    xi = _draw_xi(spec, n, seed)
    ell = ell_from_xi(xi)
    m = compute_m(ell, spec, g)
    flag = m < ell
    roots = np.flatnonzero(flag)
    w, segments, conflicts = _assign(g, spec, roots, ell[roots])
    if strict and conflicts:
        raise EnvError(f"{conflicts} trap edges assigned twice")
    u, v = nearest_neighbor_edges(g)
    env = Environment.from_edges(
        g, u, v, w,
        {"sampler": "trap", "seed": seed, "params": _spec_params(spec)},
    )
    trace = TrapFieldTrace(spec, xi, ell, m, flag, segments, conflicts)
    return env, trace


def plant_trap(spec: TrapSpec, k: int, x, g: Geometry) -> Environment:
    return plant_traps(spec, [(k, x)], g)


def plant_traps(spec: TrapSpec, plants, g: Geometry) -> Environment:
    """All-ones environment with the given (scale index, root) traps installed."""
    for k, _ in plants:
        if not 1 <= k <= spec.k_max:
            raise EnvError(f"scale index {k} outside 1..{spec.k_max}")
        spec.check_fits(g, k)
    roots = [g.site(x) for _, x in plants]
    w, segments, conflicts = _assign(g, spec, roots, [k for k, _ in plants])
    if conflicts:
        raise EnvError("planted traps overlap")
    u, v = nearest_neighbor_edges(g)
    params = _spec_params(spec)
    params["plants"] = [[int(k), int(r)] for (k, _), r in zip(plants, roots)]
    return Environment.from_edges(g, u, v, w, {"sampler": "planted-trap", "seed": None,
                                               "params": params})


def _spec_params(spec: TrapSpec) -> dict:
    return {"p": spec.p, "q": spec.q, "p_prime": spec.p_prime, "q_prime": spec.q_prime,
            "schedule": list(spec.schedule)}


def sample_origin_trap_events(spec: TrapSpec, trials: int, rng: np.random.Generator,
                              chunk: int = 10_000):
    """Draw (ell(0), m(0)) for independent fields restricted to what they depend on."""
    d = spec.d
    offs = lambda_offsets(spec.L(spec.k_max), d)
    # scale index at which each offset first belongs to Lambda_{L_k}
    first_k = np.full(len(offs), spec.k_max + 1)
    for k in range(spec.k_max, 0, -1):
        L = spec.L(k)
        inside = (np.abs(offs[:, 0]) <= 3 * L)
        first_k[inside] = k
    probs = np.array([float(spec.L(k)) ** (-d) for k in range(2, spec.k_max + 1)])
    ells, ms = [], []
    done = 0
    while done < trials:
        c = min(chunk, trials - done)
        u = rng.random((c, len(offs) + 1, len(probs)))
        xi = np.concatenate([np.ones((c, len(offs) + 1, 1), bool), u < probs], axis=2)
        ell_all = xi.shape[2] - np.argmax(xi[:, :, ::-1], axis=2)
        ell0, ell_nb = ell_all[:, 0], ell_all[:, 1:]
        m = np.ones(c, dtype=np.int64)
        for k in range(1, spec.k_max + 1):
            mask = first_k <= k
            hit = (ell_nb[:, mask] >= k).any(axis=1)
            m = np.where(hit, k, m)
        ells.append(ell0)
        ms.append(m)
        done += c
    return np.concatenate(ells), np.concatenate(ms)
