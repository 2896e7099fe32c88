"""Heat kernels of the time-changed walk on small domains, by uniformization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy import stats

from clab.analysis.bounds import fit_then_validate, ratio_check
from clab.analysis.report import BoundCheck
from clab.env.core import Environment
from clab.env.localize import LocalizedEnvironment, localize
from clab.lattice import ball

MAX_TABLE = 4000
TAIL = 1e-12
VARIANTS = ("Y", "YR", "YRk")


@dataclass(eq=False)
class HeatKernelTable:
    """p[i, j] = P^{x_i}(walk at domain[j] at time t).

    ``sources`` lists the rows as positions in ``domain``; a full table has
    every domain site as a source.
    """

    domain: np.ndarray
    sources: np.ndarray
    t: float
    p: np.ndarray
    variant: str
    killed: bool
    weights: np.ndarray  # reversible weights on the domain

    def row_sums(self) -> np.ndarray:
        return self.p.sum(axis=1)

    def balance_defect(self) -> float:
        """max |w(x) p(x,y) - w(y) p(y,x)| over pairs of sources."""
        s = self.sources
        sub = self.p[:, s]
        w = self.weights[s]
        return float(np.abs(w[:, None] * sub - (w[:, None] * sub).T).max())


def generator(obj, variant: str = "Y", domain=None, killed: bool = False,
              kappa: float | None = None):
    """Generator of Y (``Y``), Y^R (``YR``) or Y^{R,kappa} (``YRk``) on ``domain``.

    Killed: jumps out of the domain are lost.  Otherwise they are suppressed,
    which keeps the restricted chain reversible for the same weights.
    Returns (Q as csr, weights on the domain, domain).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if variant == "Y":
        env = obj.base if isinstance(obj, LocalizedEnvironment) else obj
        u, v, w, wts = env.u, env.v, env.w, env.nu
    else:
        if not isinstance(obj, LocalizedEnvironment):
            raise ValueError(f"{variant} needs a LocalizedEnvironment")
        env, wts = obj.env, obj.nuR
        u, v, w = env.u, env.v, env.w
        if variant == "YRk":
            if kappa is None or not (0 < kappa <= 1 and kappa * obj.R >= 1):
                raise ValueError("YRk needs kappa in (0, 1] with kappa R >= 1")
            m = obj.truncated(kappa)
            u, v, w = u[m], v[m], w[m]
    n = env.geometry.n_sites
    dom = np.arange(n) if domain is None else np.unique(np.asarray(domain, dtype=np.int64))
    A = sp.coo_matrix((np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))),
                      shape=(n, n)).tocsr()
    pi = np.asarray(A.sum(axis=1)).ravel()
    A_dd = A[dom][:, dom]
    out = pi[dom] if killed else np.asarray(A_dd.sum(axis=1)).ravel()
    Q = sp.diags(1.0 / wts[dom]) @ (A_dd - sp.diags(out))
    return Q.tocsr(), np.asarray(wts[dom], dtype=float), dom


def uniformized(Q: sp.csr_matrix, t: float, rows: np.ndarray | None = None) -> np.ndarray:
    """Rows of exp(tQ) by the Poisson series of P = I + Q/lam, cut at tail < 1e-12."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    n = Q.shape[0]
    if rows is None:
        V = np.eye(n)
    else:
        rows = np.asarray(rows)
        V = np.zeros((rows.size, n))
        V[np.arange(rows.size), rows] = 1.0
    if t == 0:
        return V
    lam = float(np.max(-Q.diagonal()))
    if lam <= 0:
        return V
    P = (sp.identity(n, format="csr") + Q / lam).tocsr()
    PT = P.T.tocsr()
    mu = lam * t
    kmax = int(stats.poisson.isf(TAIL, mu)) + 1
    weights = stats.poisson.pmf(np.arange(kmax + 1), mu)
    out = np.zeros_like(V)
    cur = V.T.copy()
    for k in range(kmax + 1):
        if weights[k] > 0:
            out += weights[k] * cur.T
        cur = PT @ cur
    return out


def expm_oracle(Q, t: float) -> np.ndarray:
    """Dense scaling-and-squaring exponential, for cross-checks only."""
    Qd = Q.toarray() if sp.issparse(Q) else np.asarray(Q)
    return scipy.linalg.expm(t * Qd)


def heat_kernel_exact(obj, domain, t: float, killed: bool = False, variant: str = "Y",
                      kappa: float | None = None, sources=None) -> HeatKernelTable:
    """Transition probabilities p(t, x, y) for x in ``sources`` (default: all of
    the domain, at most 4000 sites) and y in the domain."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    Q, wts, dom = generator(obj, variant, domain, killed, kappa)
    if sources is None:
        if dom.size > MAX_TABLE:
            raise ValueError(f"full table limited to {MAX_TABLE} sites; pass sources")
        rows = np.arange(dom.size)
    else:
        src = np.atleast_1d(np.asarray(sources, dtype=np.int64))
        rows = np.searchsorted(dom, src)
        if np.any(rows >= dom.size) or np.any(dom[np.minimum(rows, dom.size - 1)] != src):
            raise ValueError("sources must lie in the domain")
    p = uniformized(Q, t, rows)
    tag = variant + (":killed" if killed else "")
    return HeatKernelTable(dom, rows, float(t), p, tag, killed, wts)


def _diag_shape(R: float, t, d: int, eps: float):
    return R ** (-d) * (t / R**2) ** (-(2 + eps) / eps)


def killed_kernel_check(env: Environment, R: int, t_fracs, eps: float = 1.0) -> BoundCheck:
    """p^{B(0,R)}(t,x,y) against R^-d (t/R^2)^{-(2+eps)/eps} nu(y), x, y in B(0,R)."""
    g = env.geometry
    dom = ball(0, R, g)
    lhs, shape = [], []
    for fr in t_fracs:
        t = fr * R**2
        if not 0 < t <= R**2:
            raise ValueError("killed check needs 0 < t <= R^2")
        tab = heat_kernel_exact(env, dom, t, killed=True)
        lhs.append(tab.p.ravel())
        shape.append((_diag_shape(R, t, g.d, eps) * env.nu[dom])[None, :]
                     .repeat(dom.size, 0).ravel())
    return ratio_check("heat_killed", np.concatenate(lhs), np.concatenate(shape),
                       {"R": R, "eps": eps, "t_fracs": list(t_fracs)})


def killed_kernel_stability(env_a: Environment, R_a: int, env_b: Environment, R_b: int,
                            t_fracs, eps: float = 1.0) -> BoundCheck:
    return fit_then_validate(killed_kernel_check(env_a, R_a, t_fracs, eps),
                             killed_kernel_check(env_b, R_b, t_fracs, eps))


def check_hk_bounds(env: Environment, R: int, kappa: float, t_grid, eps: float = 1.0,
                    sources=None, reach: int | None = None) -> dict:
    """Diagonal and off-diagonal checks for the kernel of Y^{R,kappa}.

    ``diag``: p <= c R^-d (t/R^2)^{-(2+eps)/eps} e^{t/(2R^2)} nu^R(y), c fitted.
    ``offdiag``: least-squares slope of log p - log nu^R(y) against
    |x-y| log(R^2/t) / R, demeaned per (t, x), over entries with p > 1e-9 and
    t < R^2; passes when negative with magnitude at least half of 1/(5 kappa).
    ``monotone``: p decreasing in |x-y| along the first axis from each source.
    """
    g = env.geometry
    loc = localize(env, R)
    if sources is None:
        sources = [0]
    sources = [g.site(s) for s in sources]
    reach = 2 * R if reach is None else reach
    lhs, shape = [], []
    xs, ys = [], []
    mono = True
    for t in t_grid:
        if not 0 < t <= R**2:
            raise ValueError("t must lie in (0, R^2]")
        tab = heat_kernel_exact(loc, None, t, variant="YRk", kappa=kappa, sources=sources)
        p = tab.p
        nuR = loc.nuR
        lhs.append(p.ravel())
        sh = _diag_shape(R, t, g.d, eps) * np.exp(t / (2 * R**2)) * nuR
        shape.append(np.tile(sh, len(sources)))
        for i, x in enumerate(sources):
            dist = g.norm_from(x)
            e1 = g.shift(x, np.outer(np.arange(reach + 1), np.eye(g.d, dtype=np.int64)[0]))
            mono &= bool(np.all(np.diff(p[i, e1]) <= 1e-15))
            if t >= R**2:
                continue
            sel = (p[i] > 1e-9) & (dist <= reach)
            z = np.log(p[i, sel]) - np.log(nuR[sel])
            feat = dist[sel] * np.log(R**2 / t) / R
            xs.append(feat - feat.mean())
            ys.append(z - z.mean())
    diag = ratio_check("heat_diag", np.concatenate(lhs), np.concatenate(shape),
                       {"R": R, "kappa": kappa, "eps": eps, "t": list(t_grid)})
    X, Y = np.concatenate(xs), np.concatenate(ys)
    slope = float((X @ Y) / (X @ X))
    target = 0.5 / (5 * kappa)
    off = BoundCheck("heat_offdiag", [slope], [-target], fitted=slope,
                     info={"slope": slope, "required": -target, "points": int(X.size)})
    monotone = BoundCheck("heat_monotone", [0.0], [0.0], passed=mono)
    return {"diag": diag, "offdiag": off, "monotone": monotone}
