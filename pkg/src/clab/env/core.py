"""Conductance environments on the torus and their file format."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from clab.lattice import Geometry

FORMAT_VERSION = 1


class EnvError(ValueError):
    """Invalid environment data."""


@dataclass(frozen=True, eq=False)
class Environment:
    """Symmetric conductances on the torus, stored once per unordered edge.

    ``u < v`` are site indices, ``w > 0`` the conductances and ``disp`` the
    displacement of each edge read from ``u`` to ``v``.  The reverse jump uses
    ``-disp``; long edges whose displacement has a component equal to side/2
    are rejected because their lift to Z^d would be ambiguous.
    """

    geometry: Geometry
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_edges(cls, geometry: Geometry, u, v, w, meta=None) -> "Environment":
        g = geometry
        u = np.asarray(u, dtype=np.int64).ravel()
        v = np.asarray(v, dtype=np.int64).ravel()
        w = np.asarray(w, dtype=float).ravel()
        if not (u.shape == v.shape == w.shape):
            raise EnvError("edge arrays must have equal length")
        if u.size and (u.min() < 0 or v.min() < 0 or max(u.max(), v.max()) >= g.n_sites):
            raise EnvError("edge endpoint outside the torus")
        if np.any(u == v):
            raise EnvError("self-loops are not allowed (C_xx must vanish)")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise EnvError("conductances must be finite and nonnegative")
        keep = w > 0
        u, v, w = u[keep], v[keep], w[keep]
        a, b = np.minimum(u, v), np.maximum(u, v)
        key = a * g.n_sites + b
        order = np.argsort(key, kind="stable")
        a, b, w, key = a[order], b[order], w[order], key[order]
        if a.size > 1:
            dup = key[1:] == key[:-1]
            if dup.any():
                i = int(np.flatnonzero(dup)[0])
                raise EnvError(f"edge ({a[i]}, {b[i]}) listed twice")
        env = cls(g, a, b, w, dict(meta or {}))
        disp = env.disp
        long = np.abs(disp).sum(axis=1) > 1
        if np.any(np.abs(disp[long]) == g.half):
            raise EnvError("long edge with a component of length side/2 has no unique lift")
        pi = env.pi
        if np.any(pi <= 0) or np.any(~np.isfinite(pi)):
            bad = int(np.flatnonzero(~(pi > 0))[0]) if np.any(~(pi > 0)) else -1
            raise EnvError(f"pi must be positive and finite at every site (site {bad})")
        for arr in (a, b, w):
            arr.setflags(write=False)
        return env

    # -- derived quantities -------------------------------------------------

    @property
    def n_edges(self) -> int:
        return int(self.u.size)

    @cached_property
    def disp(self) -> np.ndarray:
        g = self.geometry
        c = g.all_coords
        d = g.reduce(c[self.v] - c[self.u])
        d.setflags(write=False)
        return d

    @cached_property
    def length2(self) -> np.ndarray:
        return (self.disp.astype(float) ** 2).sum(axis=1)

    @cached_property
    def pi(self) -> np.ndarray:
        n = self.geometry.n_sites
        p = np.bincount(self.u, self.w, n) + np.bincount(self.v, self.w, n)
        p.setflags(write=False)
        return p

    @cached_property
    def nu(self) -> np.ndarray:
        n = self.geometry.n_sites
        wl = self.w * self.length2
        r = np.bincount(self.u, wl, n) + np.bincount(self.v, wl, n)
        r.setflags(write=False)
        return r

    @cached_property
    def adjacency(self) -> "Adjacency":
        return Adjacency.build(self)

    def matrix(self) -> sp.csr_matrix:
        """Symmetric sparse matrix of conductances."""
        n = self.geometry.n_sites
        m = sp.coo_matrix((self.w, (self.u, self.v)), shape=(n, n))
        return (m + m.T).tocsr()

    def conductance(self, x, y) -> float:
        g = self.geometry
        a, b = sorted((g.site(x), g.site(y)))
        lo = np.searchsorted(self.u, a, "left")
        hi = np.searchsorted(self.u, a, "right")
        j = lo + np.searchsorted(self.v[lo:hi], b)
        if j < hi and self.v[j] == b:
            return float(self.w[j])
        return 0.0

    def is_nearest_neighbor(self) -> bool:
        return bool(np.all(self.length2 == 1))

    def with_edges(self, u, v, w, **meta) -> "Environment":
        m = dict(self.meta)
        m.update(meta)
        return Environment.from_edges(self.geometry, u, v, w, m)

    def validate(self) -> None:
        """Recheck every invariant, including cache coherence of pi and nu."""
        again = Environment.from_edges(self.geometry, self.u, self.v, self.w, self.meta)
        if not (np.allclose(again.pi, self.pi) and np.allclose(again.nu, self.nu)):
            raise EnvError("cached site weights disagree with the edge list")
        n = self.geometry.n_sites
        graph = sp.coo_matrix((np.ones(self.n_edges), (self.u, self.v)), shape=(n, n))
        ncomp, _ = sp.csgraph.connected_components(graph, directed=False)
        if ncomp != 1:
            raise EnvError(f"environment is disconnected ({ncomp} components)")


@dataclass(frozen=True, eq=False)
class Adjacency:
    """Per-site outgoing jumps in CSR layout, plus a padded copy for batches."""

    indptr: np.ndarray
    nbr: np.ndarray
    weight: np.ndarray
    disp: np.ndarray

    @classmethod
    def build(cls, env: Environment) -> "Adjacency":
        n = env.geometry.n_sites
        src = np.concatenate([env.u, env.v])
        dst = np.concatenate([env.v, env.u])
        w = np.concatenate([env.w, env.w])
        dv = np.concatenate([env.disp, -env.disp])
        order = np.lexsort((dst, src))
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return cls(indptr, dst[order], w[order], dv[order])

    @cached_property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def row(self, x: int) -> slice:
        return slice(self.indptr[x], self.indptr[x + 1])

    @cached_property
    def padded(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(cumulative probabilities, neighbours, displacements) padded to max degree.

        Padding slots carry cumulative probability 1 so they are never selected
        by an inverse-CDF lookup with a uniform in [0, 1).
        """
        n = self.degree.size
        k = int(self.degree.max())
        slot = np.arange(self.nbr.size) - np.repeat(self.indptr[:-1], self.degree)
        rows = np.repeat(np.arange(n), self.degree)
        wpad = np.zeros((n, k))
        wpad[rows, slot] = self.weight
        cum = np.cumsum(wpad, axis=1)
        cum /= cum[:, -1:]
        # last real slot exactly 1 so round-off cannot leak into padding
        cum[np.arange(k)[None, :] >= (self.degree - 1)[:, None]] = 1.0
        nbr = np.zeros((n, k), dtype=np.int64)
        dsp = np.zeros((n, k, self.disp.shape[1]), dtype=np.int32)
        nbr[rows, slot] = self.nbr
        dsp[rows, slot] = self.disp
        return cum, nbr, dsp


def nearest_neighbor_edges(g: Geometry) -> tuple[np.ndarray, np.ndarray]:
    """All d*side^d nearest-neighbour torus edges, axis-major order."""
    sites = np.arange(g.n_sites)
    us, vs = [], []
    for i in range(g.d):
        e = np.zeros(g.d, dtype=np.int64)
        e[i] = 1
        us.append(sites)
        vs.append(g.shift(sites, e))
    return np.concatenate(us), np.concatenate(vs)


# -- file format --------------------------------------------------------------


def save_environment(env: Environment, path) -> tuple[Path, Path]:
    """Write ``<path>`` (JSON header) and ``<path>.edges.csv``.

    Conductances are written with ``repr`` so a reload is bit-exact.
    """
    path = Path(path)
    edges_path = path.with_name(path.name + ".edges.csv")
    header = {
        "format_version": FORMAT_VERSION,
        "d": env.geometry.d,
        "side": env.geometry.side,
        "sampler": env.meta.get("sampler"),
        "params": env.meta.get("params", {}),
        "seed": env.meta.get("seed"),
        "n_edges": env.n_edges,
        "edges_file": edges_path.name,
    }
    with open(edges_path, "w", newline="") as fh:
        fh.write("x_index,y_index,conductance\n")
        for a, b, c in zip(env.u.tolist(), env.v.tolist(), env.w.tolist()):
            fh.write(f"{a},{b},{c!r}\n")
    path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return path, edges_path


def load_environment(path) -> Environment:
    path = Path(path)
    header = json.loads(path.read_text())
    if header.get("format_version") != FORMAT_VERSION:
        raise EnvError(f"unsupported format version {header.get('format_version')}")
    g = Geometry(int(header["d"]), int(header["side"]))
    edges_path = path.with_name(header["edges_file"])
    with open(edges_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["x_index", "y_index", "conductance"]:
        raise EnvError("bad edge CSV header")
    data = rows[1:]
    u = np.array([int(r[0]) for r in data], dtype=np.int64)
    v = np.array([int(r[1]) for r in data], dtype=np.int64)
    w = np.array([float(r[2]) for r in data])
    if "n_edges" in header and header["n_edges"] != len(data):
        raise EnvError("edge count does not match header")
    meta = {"sampler": header.get("sampler"), "params": header.get("params", {}),
            "seed": header.get("seed")}
    env = Environment.from_edges(g, u, v, w, meta)
    env.validate()
    return env
