"""Scanners for the long-edge events of long-range percolation and the
Monte Carlo estimate of the trap probability."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from clab import rng as _rng
from clab.analysis.report import BoundCheck
from clab.env.core import Environment
from clab.env.trap import TrapSpec, sample_origin_trap_events
from clab.lattice import Geometry


def gamma_window(s: float, d: int) -> tuple[float, float]:
    return (s - d) / d, min((2 * s - d) / (2 * d), 1.0)


@dataclass
class LrpEventScan:
    n: int
    gamma: float
    a_witnesses: list = field(default_factory=list)  # (x, y) site pairs
    b_witness: tuple | None = None                   # (x, y, x', y')

    @property
    def A_n(self) -> bool:
        return bool(self.a_witnesses)

    @property
    def B_n(self) -> bool:
        return self.b_witness is not None

    def as_dict(self) -> dict:
        return {"n": self.n, "gamma": self.gamma, "A_n": self.A_n, "B_n": self.B_n,
                "a_witnesses": [list(map(int, p)) for p in self.a_witnesses],
                "b_witness": None if self.b_witness is None else list(map(int, self.b_witness))}


def long_edges(env: Environment) -> tuple[np.ndarray, np.ndarray]:
    m = env.length2 > 1
    return env.u[m], env.v[m]


def scan_lrp_events(edges, g: Geometry, n: int, gamma: float, s: float) -> LrpEventScan:
    """Exhaustive scan for A(x,y) (|x| <= n^gamma, n < |y| <= 2n) and for B_n.

    ``edges`` is an Environment or a pair (u, v) of long-edge endpoint arrays;
    nearest-neighbour edges are always present and count as C = 1 in B_n.
    """
    lo, hi = gamma_window(s, g.d)
    if not lo < gamma < hi:
        raise ValueError(f"gamma={gamma} outside the window ({lo:.4f}, {hi:.4f})")
    if not 2 * n < g.half:
        raise ValueError(f"need 2n < side/2 (n={n}, side={g.side})")
    u, v = long_edges(edges) if isinstance(edges, Environment) else map(np.asarray, edges)
    r = g.norm_from(0)
    small = r <= n**gamma
    deg = np.bincount(u, minlength=g.n_sites) + np.bincount(v, minlength=g.n_sites)
    # both orientations of every long edge, x the candidate near endpoint
    x = np.concatenate([u, v])
    y = np.concatenate([v, u])
    near = small[x]
    x, y = x[near], y[near]
    ry = r[y]
    a_mask = (ry > n) & (ry <= 2 * n) & (deg[y] == 1)
    scan = LrpEventScan(n, gamma, list(zip(x[a_mask].tolist(), y[a_mask].tolist())))
    b_mask = (ry >= n) & (ry <= 2 * n)
    bx, by = x[b_mask], y[b_mask]
    if bx.size < 2:
        return scan
    order = np.argsort(by, kind="stable")
    bx, by = bx[order], by[order]
    same = np.flatnonzero(by[1:] == by[:-1])
    if same.size:
        i = int(same[0])
        scan.b_witness = (bx[i], by[i], bx[i + 1], by[i + 1])
        return scan
    ys = by
    cy = g.coords(ys)
    diff = np.abs(g.reduce(cy[:, None, :] - cy[None, :, :])).sum(axis=2)
    nn = np.argwhere(np.triu(diff == 1))
    if nn.size:
        i, j = nn[0]
        scan.b_witness = (bx[i], by[i], bx[j], by[j])
        return scan
    pos = {int(yy): k for k, yy in enumerate(ys.tolist())}
    hit = np.isin(u, ys) & np.isin(v, ys)
    if hit.any():
        e = int(np.flatnonzero(hit)[0])
        i, j = pos[int(u[e])], pos[int(v[e])]
        scan.b_witness = (bx[i], by[i], bx[j], by[j])
    return scan


def wilson_interval(k: int, n: int, level: float = 0.99) -> tuple[float, float]:
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def trap_probability_mc(spec: TrapSpec, k: int, trials: int, seed: int,
                        level: float = 0.99) -> BoundCheck:
    """Estimate P(m(0) < ell(0) = k) and compare the Wilson interval with L_k^-d."""
    if k < 2 or k > spec.k_max:
        raise ValueError(f"k must lie in 2..{spec.k_max}")
    if trials < 10_000:
        raise ValueError("need at least 10^4 trials")
    ell, m = sample_origin_trap_events(spec, trials, _rng.stream(seed, "trap-mc"))
    hits = int(((ell == k) & (m < k)).sum())
    lo, hi = wilson_interval(hits, trials, level)
    bound = float(spec.L(k)) ** (-spec.d)
    a = (ell == k).astype(float)
    b = (m < k).astype(float)
    corr = float(np.corrcoef(a, b)[0, 1]) if a.std() > 0 and b.std() > 0 else 0.0
    return BoundCheck(f"trap_probability:k={k}", [hi], [bound], passed=hi <= bound and lo > 0,
                      info={"estimate": hits / trials, "hits": hits, "trials": trials,
                            "wilson": [lo, hi], "level": level, "bound": bound,
                            "corr_ell_m": corr, "corr_sigma": 1 / np.sqrt(trials)})
