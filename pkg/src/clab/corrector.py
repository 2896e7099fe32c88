"""Generator assembly, the periodic corrector, the effective covariance and
sublinearity diagnostics."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from clab.env.core import EnvError, Environment, nearest_neighbor_edges
from clab.env.moments import nn_conductances
from clab.env.trap import TrapSpec, segment_edges
from clab.lattice import outer_boundary


class SolverError(RuntimeError):
    """The iterative solve did not reach the requested residual."""


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """(L f)(x) = sum_y C_xy (f(y) - f(x)) as a sparse matrix ``A - diag(pi)``."""

    L: sp.csr_matrix
    pi: np.ndarray
    nu: np.ndarray

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.L @ f

    def quadratic_form(self, f: np.ndarray) -> float:
        """<f, -L f>, which is half the ordered-pair Dirichlet form."""
        return float(-(f @ (self.L @ f)))

    def time_changed(self) -> sp.csr_matrix:
        """Generator of Y: diag(1/nu) L."""
        return sp.diags(1.0 / self.nu) @ self.L


def assemble(env: Environment) -> GeneratorMatrix:
    A = env.matrix()
    L = (A - sp.diags(env.pi)).tocsr()
    return GeneratorMatrix(L, env.pi, env.nu)


def drift(env: Environment) -> np.ndarray:
    """b_i(x) = sum_y C_xy (y - x)_i, the generator applied to the lifted coordinates."""
    n, d = env.geometry.n_sites, env.geometry.d
    b = np.zeros((n, d))
    cd = env.w[:, None] * env.disp
    np.add.at(b, env.u, cd)
    np.add.at(b, env.v, -cd)
    return b


def residual_scale(env: Environment) -> float:
    """max_x sum_y C_xy |y - x|: the size of L applied to a coordinate."""
    n = env.geometry.n_sites
    s = env.w * np.sqrt(env.length2)
    return float((np.bincount(env.u, s, n) + np.bincount(env.v, s, n)).max())


@dataclass(eq=False)
class CorrectorField:
    chi: np.ndarray             # (n_sites, d)
    residual: float             # max_x |(L Psi)(x)|
    scale: float
    tol: float
    iterations: list = field(default_factory=list)
    method: str = "pcg"

    @property
    def d(self) -> int:
        return self.chi.shape[1]

    def summary(self) -> dict:
        return {"residual": self.residual, "scale": self.scale, "tol": self.tol,
                "iterations": list(self.iterations), "method": self.method,
                "chi_mean": self.chi.mean(axis=0).tolist(),
                "chi_max": float(np.abs(self.chi).max())}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["site_index"] + [f"chi_{i + 1}" for i in range(self.d)])
            for x, row in enumerate(self.chi.tolist()):
                wr.writerow([x] + [repr(v) for v in row])


def harmonic_residual(env: Environment, chi: np.ndarray) -> float:
    """max_x |(L Psi)(x)| with Psi(y) - Psi(x) = (y - x) + chi(y) - chi(x)."""
    L = assemble(env).L
    return float(np.abs(drift(env) + L @ chi).max())


def _pcg(K: sp.csr_matrix, b: np.ndarray, diag: np.ndarray, tol_abs: float,
         max_iter: int) -> tuple[np.ndarray, int, float]:
    """Jacobi-preconditioned CG for the singular system K x = b with b orthogonal
    to constants; iterates are re-projected onto mean zero."""
    x = np.zeros_like(b)
    r = b - b.mean()
    z = r / diag
    p = z.copy()
    rz = r @ z
    it = 0
    res = float(np.abs(r).max())
    while res > tol_abs and it < max_iter:
        Kp = K @ p
        alpha = rz / (p @ Kp)
        x += alpha * p
        x -= x.mean()
        r -= alpha * Kp
        r -= r.mean()
        it += 1
        if it % 50 == 0:
            r = b - K @ x  # refresh against drift of the recursive residual
        res = float(np.abs(r).max())
        z = r / diag
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = float(np.abs(b - K @ x).max())
    return x, it, res


def solve_corrector(env: Environment, tol: float = 1e-10, max_iter: int | None = None,
                    strict: bool = True) -> CorrectorField:
    """Solve -L chi_i = b_i on the torus, gauge chi(0) = 0.

    Converged when max_x |(L Psi)(x)| <= tol * scale with ``residual_scale``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    env.validate()
    n, d = env.geometry.n_sites, env.geometry.d
    if max_iter is None:
        max_iter = int(50 * np.sqrt(n))
    gm = assemble(env)
    K = (-gm.L).tocsr()
    b = drift(env)
    scale = residual_scale(env)
    chi = np.zeros((n, d))
    its = []
    worst = 0.0
    for i in range(d):
        x, it, res = _pcg(K, b[:, i], env.pi, tol * scale, max_iter)
        if res > tol * scale:
            # one restart from the current iterate usually clears round-off stalls
            dx, it2, res = _pcg(K, b[:, i] - K @ x, env.pi, tol * scale, max_iter)
            x, it = x + dx, it + it2
        chi[:, i] = x - x[0]
        its.append(it)
        worst = max(worst, res)
    residual = float(np.abs(b - K @ chi).max())
    cf = CorrectorField(chi, residual, scale, tol, its, "pcg")
    if strict and residual > tol * scale:
        raise SolverError(f"residual {residual:.3e} above {tol * scale:.3e} "
                          f"after {its} iterations")
    return cf


def solve_corrector_dense(env: Environment) -> CorrectorField:
    """Oracle: ground site 0 and solve the reduced system by dense elimination."""
    n, d = env.geometry.n_sites, env.geometry.d
    if n > 4096:
        raise ValueError("dense oracle limited to 4096 sites")
    env.validate()
    K = -assemble(env).L.toarray()
    b = drift(env)
    chi = np.zeros((n, d))
    chi[1:] = np.linalg.solve(K[1:, 1:], b[1:])
    residual = float(np.abs(b - K @ chi).max())
    return CorrectorField(chi, residual, residual_scale(env), 0.0, [], "dense")


def _check_pair(env: Environment, cf) -> np.ndarray:
    chi = cf.chi if isinstance(cf, CorrectorField) else np.asarray(cf, dtype=float)
    if chi.shape != (env.geometry.n_sites, env.geometry.d):
        raise EnvError(f"corrector shape {chi.shape} does not match the environment")
    return chi


def covariance_sigma(env: Environment, cf) -> np.ndarray:
    """Sigma_ij = avg_x sum_y C_xy (d + dchi)_i (d + dchi)_j / avg_x pi(x)."""
    chi = _check_pair(env, cf)
    delta = env.disp + chi[env.v] - chi[env.u]
    # each unordered edge appears twice among ordered pairs with the same product
    S = 2.0 * (delta * env.w[:, None]).T @ delta
    S /= env.pi.sum()
    return 0.5 * (S + S.T)


def sigma_json(S: np.ndarray) -> str:
    return json.dumps({"sigma": S.tolist(), "d": int(S.shape[0])})


@dataclass(frozen=True)
class SublinearityProfile:
    radii: list
    deltas: list
    density: list    # density[i][j] = A_{deltas[j]}(radii[i])
    max_ratio: list  # S_n per radius

    def as_dict(self) -> dict:
        return asdict(self)


def sublinearity_profile(env: Environment, cf, radii, deltas, center=0) -> SublinearityProfile:
    """Counts over the sup-norm box |x - center| <= n, chi re-gauged to vanish at center."""
    chi = _check_pair(env, cf)
    g = env.geometry
    c = g.site(center)
    dist = g.sup_norm_from(c)
    size = np.linalg.norm(chi - chi[c], axis=1)
    dens, smax = [], []
    for n in radii:
        if not 1 <= n <= g.half:
            raise ValueError(f"radius {n} outside 1..side/2")
        box = size[dist <= n]
        dens.append([float((box > delta * n).sum()) / n ** g.d for delta in deltas])
        smax.append(float(box.max()) / n)
    return SublinearityProfile(list(radii), list(deltas), dens, smax)


@dataclass(frozen=True)
class TrapEnergyReport:
    k: int
    L: int
    energy: float
    lower: float
    upper: float

    @property
    def lower_ok(self) -> bool:
        return self.energy >= self.lower * (1 - 1e-9)

    @property
    def upper_ok(self) -> bool:
        return self.energy <= self.upper * (1 + 1e-9)

    def as_dict(self) -> dict:
        return {**asdict(self), "lower_ok": self.lower_ok, "upper_ok": self.upper_ok}


def trap_energy_check(env: Environment, cf, spec: TrapSpec, x, k: int) -> TrapEnergyReport:
    """Energy of Psi over E_L(x) against b_L L^-1 |Psi(x + L e_1) - Psi(x)|^2 from
    below and a_L sum_{y in boundary} |Psi(y) - Psi(x)|^2 from above."""
    chi = _check_pair(env, cf)
    g = env.geometry
    L = spec.L(k)
    x = g.site(x)
    inner, fringe = segment_edges(x, L, g)
    eu, ev = nearest_neighbor_edges(g)
    cond = nn_conductances(env)
    a, b = float(spec.a(L)), float(spec.b(L))
    if k > 1 and not (np.allclose(cond[inner], b) and np.allclose(cond[fringe], a)):
        raise EnvError(f"no trap of scale index {k} rooted at site {x}")
    ids = np.concatenate([inner, fringe])
    axis = ids // g.n_sites
    grad = np.eye(g.d)[axis] + chi[ev[ids]] - chi[eu[ids]]
    energy = float((cond[ids] * (grad**2).sum(axis=1)).sum())
    xc = g.coords(x)

    def psi_diff(y):
        return g.reduce(g.coords(y) - xc) + chi[y] - chi[x]

    end = g.shift(x, L * np.eye(g.d, dtype=np.int64)[0])
    lower = b / L * float((psi_diff(end) ** 2).sum())
    seg = g.index(xc + np.outer(np.arange(L + 1), np.eye(g.d, dtype=np.int64)[0]))
    bd = outer_boundary(seg, g)
    upper = a * float(sum((psi_diff(int(y)) ** 2).sum() for y in bd))
    return TrapEnergyReport(k, L, energy, lower, upper)
