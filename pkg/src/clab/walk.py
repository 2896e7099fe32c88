"""Random walks among the conductances.

Three clocks share one jump chain:

* ``Z``: the discrete chain, jump k happens at time k;
* ``X``: the variable-speed walk, exponential holding with rate pi(x);
* ``Y``: the time-changed walk, exponential holding with rate pi(x)/nu(x).

Each trajectory owns a counter-based stream keyed by (seed, stream id).  The
stream is consumed in blocks of ``BLOCK`` rows of two uniforms, one row per
jump (column 0 picks the neighbour, column 1 the holding time), so the scalar
engine ``run_walk`` and the vectorised ``WalkerBatch`` produce identical
paths for equal (seed, stream id).
"""
from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from clab import rng as _rng
from clab.env.core import Environment
from clab.lattice import ball

BLOCK = 1024
KINDS = ("Z", "X", "Y")


class WalkError(ValueError):
    pass


def _walk_stream(seed: int, stream_id: int) -> np.random.Generator:
    return _rng.stream(seed, "walk", stream_id)


def holding_rates(env: Environment, kind: str) -> np.ndarray | None:
    if kind == "Z":
        return None
    if kind == "X":
        return np.asarray(env.pi, dtype=float)
    if kind == "Y":
        return env.pi / env.nu
    raise WalkError(f"unknown clock {kind!r}; expected one of {KINDS}")


def step_discrete(env: Environment, x, rng: np.random.Generator) -> int:
    """One jump of the discrete chain from x: y is chosen w.p. C_xy / pi(x)."""
    g = env.geometry
    x = g.site(x)
    adj = env.adjacency
    sl = adj.row(x)
    if sl.start == sl.stop:
        raise WalkError(f"site {x} is isolated")
    cum = np.cumsum(adj.weight[sl])
    k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return int(adj.nbr[sl][min(k, sl.stop - sl.start - 1)])


@dataclass(eq=False)
class Trajectory:
    """Jump log of one walk.

    ``times[k]`` and ``sites[k]`` describe jump k+1; ``positions`` holds the
    lifted path in Z^d, with ``positions[0]`` the coordinates of ``start``.
    """

    kind: str
    start: int
    times: np.ndarray
    sites: np.ndarray
    positions: np.ndarray
    horizon: float

    def n_jumps(self, t: float | None = None) -> int:
        if t is None:
            return int(self.times.size)
        if t > self.horizon:
            raise WalkError(f"time {t} beyond the simulated horizon {self.horizon}")
        return int(np.searchsorted(self.times, t, side="right"))

    @property
    def jump_sites(self) -> np.ndarray:
        """Z_0, Z_1, ... as site indices."""
        return np.concatenate([[self.start], self.sites])

    def holding_times(self) -> np.ndarray:
        """Completed holding durations at Z_0, Z_1, ..."""
        return np.diff(np.concatenate([[0.0], self.times]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time", "site_index"])
            wr.writerow([repr(0.0), self.start])
            for t, s in zip(self.times.tolist(), self.sites.tolist()):
                wr.writerow([repr(float(t)), s])


class _Tables:
    """Per-site jump tables as Python lists for the scalar engine."""

    def __init__(self, env: Environment, kind: str):
        cum, nbr, dsp = env.adjacency.padded
        deg = env.adjacency.degree
        self.cum = [cum[i, : deg[i]].tolist() for i in range(deg.size)]
        self.nbr = [nbr[i, : deg[i]].tolist() for i in range(deg.size)]
        self.dsp = [dsp[i, : deg[i]] for i in range(deg.size)]
        rates = holding_rates(env, kind)
        self.rate = None if rates is None else rates.tolist()


def run_walk(env: Environment, kind: str, x0, horizon: float, seed: int,
             stream_id: int = 0, max_jumps: int = 50_000_000) -> Trajectory:
    """Simulate one trajectory up to ``horizon`` (steps for Z, time otherwise)."""
    if kind not in KINDS:
        raise WalkError(f"unknown clock {kind!r}")
    if not horizon > 0:
        raise WalkError("horizon must be positive")
    g = env.geometry
    x = g.site(x0)
    tab = _Tables(env, kind)
    gen = _walk_stream(seed, stream_id)
    times, sites, steps = [], [], []
    t = 0.0
    buf = gen.random((BLOCK, 2)).tolist()
    cur = 0
    n_target = int(horizon) if kind == "Z" else None
    while True:
        if kind == "Z" and len(sites) >= n_target:
            break
        if cur == BLOCK:
            buf = gen.random((BLOCK, 2)).tolist()
            cur = 0
        u0, u1 = buf[cur]
        cur += 1
        if kind == "Z":
            t += 1.0
        else:
            t += -math.log1p(-u1) / tab.rate[x]
            if t > horizon:
                break
        row = tab.cum[x]
        k = bisect_right(row, u0)
        steps.append(tab.dsp[x][k])
        x = tab.nbr[x][k]
        times.append(t)
        sites.append(x)
        if len(sites) > max_jumps:
            raise WalkError("jump budget exhausted")
    start = g.site(x0)
    pos = np.empty((len(sites) + 1, g.d), dtype=np.int64)
    pos[0] = g.coords(start)
    if steps:
        np.cumsum(np.asarray(steps, dtype=np.int64), axis=0, out=pos[1:])
        pos[1:] += pos[0]
    return Trajectory(kind, start, np.asarray(times), np.asarray(sites, dtype=np.int64),
                      pos, float(horizon))


class WalkerBatch:
    """Many independent walkers advanced in lockstep, one jump per call."""

    def __init__(self, env: Environment, kind: str, starts, seed: int, stream_ids=None):
        if kind not in KINDS:
            raise WalkError(f"unknown clock {kind!r}")
        g = env.geometry
        self.env, self.kind, self.g = env, kind, g
        self.cum, self.nbr, self.dsp = env.adjacency.padded
        rates = holding_rates(env, kind)
        self.rate = rates
        starts = np.asarray([g.site(s) for s in np.atleast_1d(starts)], dtype=np.int64) \
            if np.ndim(starts) else np.asarray([g.site(starts)], dtype=np.int64)
        n = starts.size
        ids = np.arange(n) if stream_ids is None else np.asarray(stream_ids)
        if ids.size != n:
            raise WalkError("one stream id per walker")
        self.gens = [_walk_stream(seed, int(i)) for i in ids]
        self.buf = np.stack([gen.random((BLOCK, 2)) for gen in self.gens])
        self.cursor = np.zeros(n, dtype=np.int64)
        self.site = starts.copy()
        self.start = starts.copy()
        self.pos = g.coords(starts).astype(np.int64)
        self.time = np.zeros(n)
        self.jumps = np.zeros(n, dtype=np.int64)

    def __len__(self):
        return self.site.size

    def _refill(self, idx: np.ndarray) -> None:
        for i in idx[self.cursor[idx] == BLOCK].tolist():
            self.buf[i] = self.gens[i].random((BLOCK, 2))
            self.cursor[i] = 0

    def _draw(self, idx: np.ndarray) -> np.ndarray:
        self._refill(idx)
        u = self.buf[idx, self.cursor[idx]]
        self.cursor[idx] += 1
        return u

    def peek_hold(self, idx: np.ndarray) -> np.ndarray:
        """Holding time the walkers in ``idx`` will spend before their next jump."""
        self._refill(idx)
        u1 = self.buf[idx, self.cursor[idx], 1]
        if self.kind == "Z":
            return np.ones(idx.size)
        return -np.log1p(-u1) / self.rate[self.site[idx]]

    def step(self, idx: np.ndarray | None = None) -> np.ndarray:
        """Advance walkers ``idx`` (default all) by one jump; returns the jump vectors."""
        if idx is None:
            idx = np.arange(len(self))
        u = self._draw(idx)
        x = self.site[idx]
        if self.kind == "Z":
            self.time[idx] += 1.0
        else:
            self.time[idx] += -np.log1p(-u[:, 1]) / self.rate[x]
        k = (u[:, :1] >= self.cum[x]).sum(axis=1)
        jump = self.dsp[x, k]
        self.site[idx] = self.nbr[x, k]
        self.pos[idx] += jump
        self.jumps[idx] += 1
        return jump


def batch_positions(env: Environment, x0, n_traj: int, steps, seed: int) -> np.ndarray:
    """Lifted positions of ``n_traj`` discrete chains at the given step counts.

    Returns an array of shape (len(steps), n_traj, d).
    """
    steps = np.asarray(steps, dtype=np.int64)
    order = np.argsort(steps)
    out = np.empty((steps.size, n_traj, env.geometry.d), dtype=np.int64)
    wb = WalkerBatch(env, "Z", np.full(n_traj, env.geometry.site(x0)), seed)
    done = 0
    for j in order:
        while done < steps[j]:
            wb.step()
            done += 1
        out[j] = wb.pos
    return out


# -- scaled paths ---------------------------------------------------------------


@dataclass(eq=False)
class ScaledPath:
    """t -> B^(n)(t): linear interpolation of Z_{floor(tn)}, Z_{floor(tn)+1}, over sqrt(n)."""

    n: float
    positions: np.ndarray

    @property
    def span(self) -> float:
        return (self.positions.shape[0] - 1) / self.n

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        tn = t * self.n
        k = np.floor(tn).astype(np.int64)
        frac = (tn - k)[..., None]
        last = self.positions.shape[0] - 1
        need = np.where(frac[..., 0] > 0, k + 1, k)
        if np.any(t < 0) or np.any(need > last):
            raise WalkError("path evaluated beyond the simulated steps")
        k1 = np.minimum(k + 1, last)
        z0 = self.positions[k].astype(float)
        z1 = self.positions[k1].astype(float)
        return (z0 + frac * (z1 - z0)) / math.sqrt(self.n)


def scaled_path(traj: Trajectory, n: float) -> ScaledPath:
    if traj.kind != "Z":
        raise WalkError("scaled paths are built from the discrete chain")
    return ScaledPath(float(n), traj.positions)


# -- exit times and time change ----------------------------------------------------


def exit_time(env: Environment, x, r: int, seed: int, kind: str = "Y",
              stream_id: int = 0) -> float:
    """First time the walk started at x leaves the sup-norm ball B(x, r)."""
    return float(exit_times(env, x, r, seed, 1, kind, first_stream=stream_id)[0])


def exit_times(env: Environment, x, r: int, seed: int, n_traj: int, kind: str = "Y",
               first_stream: int = 0, max_jumps: int = 10_000_000) -> np.ndarray:
    g = env.geometry
    if r < 0 or 2 * r + 1 > g.side:
        raise WalkError(f"ball of radius {r} does not fit the torus")
    x = g.site(x)
    ids = first_stream + np.arange(n_traj)
    wb = WalkerBatch(env, kind, np.full(n_traj, x), seed, ids)
    origin = g.coords(x)
    active = np.arange(n_traj)
    tau = np.full(n_traj, np.nan)
    steps = 0
    while active.size:
        wb.step(active)
        out = np.abs(wb.pos[active] - origin).max(axis=1) > r
        if out.any():
            tau[active[out]] = wb.time[active[out]]
            active = active[~out]
        steps += 1
        if steps > max_jumps:
            raise WalkError("exit not reached within the jump budget")
    return tau


def time_change_ratio(traj: Trajectory, t: float) -> float:
    """N_t / t for the jump counting process of the trajectory."""
    if not t > 0:
        raise WalkError("t must be positive")
    return traj.n_jumps(t) / t


def jump_counts(env: Environment, x0, t: float, seed: int, n_traj: int,
                kind: str = "Y") -> np.ndarray:
    """Number of jumps by time t for ``n_traj`` independent walks (vectorised)."""
    g = env.geometry
    wb = WalkerBatch(env, kind, np.full(n_traj, g.site(x0)), seed)
    active = np.arange(n_traj)
    while active.size:
        hold = wb.peek_hold(active)
        stay = wb.time[active] + hold > t
        active = active[~stay]
        if active.size:
            wb.step(active)
    return wb.jumps.copy()


def occupation(traj: Trajectory, n_sites: int, weighted: bool = False) -> np.ndarray:
    """Visit counts of Z_0..Z_{n-1}, or total holding time per site if ``weighted``."""
    visited = traj.jump_sites[:-1]
    if not weighted:
        return np.bincount(visited, minlength=n_sites).astype(float)
    return np.bincount(visited, traj.holding_times(), minlength=n_sites)


def mean_exit_time_exact(env: Environment, x, r: int, kind: str = "Y") -> float:
    """E^x tau_{B(x,r)} from the generator equation L u = -1 on the ball, u = 0 outside."""
    g = env.geometry
    dom = ball(x, r, g)
    A = env.matrix().tocsr()[dom][:, dom]
    speed = {"Z": env.pi, "X": np.ones(g.n_sites), "Y": env.nu}[kind][dom]
    gen = sp.diags(1.0 / speed) @ (A - sp.diags(env.pi[dom]))
    u = spla.spsolve(gen.tocsc(), -np.ones(dom.size))
    return float(u[np.searchsorted(dom, g.site(x))])
