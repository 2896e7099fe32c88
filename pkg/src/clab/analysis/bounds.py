"""Numeric checks of the localization bounds, the Sobolev and Nash
inequalities, and the exit-time tail.

Bounds whose constant is not explicit are fitted: the constant is the largest
observed ratio lhs / shape on one sample set, and a disjoint set must then
satisfy the bound with twice that constant (``fit_then_validate``).
"""
from __future__ import annotations

import numpy as np

from clab.analysis.forms import dirichlet_form, simple_form
from clab.analysis.report import BoundCheck
from clab.env.core import Environment
from clab.env.localize import LocalizedEnvironment, localized_edges
from clab.lattice import Geometry


def localization_bounds(env: Environment, R: int, kappas) -> list:
    """The two exact bounds on C^R, nu^R for one R and each kappa in ``kappas``.

    bound0: sup_x sum_{|x-y| <= kappa R} C^R_xy |x-y|^2 / nu^R(x) <= 1 + 2d.
    bound:  sup_{x in B(0,4R)} sum_{|x-y| > kappa R} C^R_xy / nu^R(x) <= (1+2d) / (kappa R)^2.

    Returns one (bound0, bound) pair per kappa.
    """
    kappas = np.atleast_1d(np.asarray(kappas, dtype=float))
    for kappa in kappas:
        if not (0 < kappa <= 1 and kappa * R >= 1):
            raise ValueError("need kappa in (0, 1] and kappa R >= 1")
    g = env.geometry
    u, v, w, len2, nuR = localized_edges(env, R)
    n = g.n_sites
    inside = g.sup_norm_from(0) <= 4 * R
    c = 1 + 2 * g.d
    out = []
    for kappa in kappas.tolist():
        short = len2 <= (kappa * R) ** 2 + 1e-9
        a = w * len2 * short
        b = w * ~short
        s0 = np.bincount(u, a, n) + np.bincount(v, a, n)
        s1 = np.bincount(u, b, n) + np.bincount(v, b, n)
        r0 = float((s0 / nuR).max())
        r1 = float((s1[inside] / nuR[inside]).max())
        info = {"R": R, "kappa": kappa}
        out.append((BoundCheck("bound0", [r0], [c], info=info),
                    BoundCheck("bound", [r1], [c / (kappa * R) ** 2], info=info)))
    return out


def ratio_check(name: str, lhs, shape, info=None) -> BoundCheck:
    """Fit c = max lhs / shape; instances with shape = 0 must have lhs = 0."""
    lhs = np.asarray(lhs, dtype=float)
    shape = np.asarray(shape, dtype=float)
    pos = shape > 0
    if np.any(~pos & (lhs > 0)):
        raise ValueError(f"{name}: positive left side against a vanishing shape")
    ratios = np.zeros_like(lhs)
    ratios[pos] = lhs[pos] / shape[pos]
    c = float(ratios.max()) if ratios.size else 0.0
    info = dict(info or {})
    info["ratios"] = ratios.tolist()
    return BoundCheck(name, lhs, c * shape, fitted=c, passed=True, info=info)


def fit_then_validate(fit: BoundCheck, val: BoundCheck, factor: float = 2.0) -> BoundCheck:
    """Validate a fitted constant on a disjoint sample set.

    Passes when every validation ratio is at most ``factor`` times the fitted
    constant and the two fitted constants agree within ``factor``.
    """
    cA, cB = fit.fitted, val.fitted
    ratios = np.asarray(val.info["ratios"])
    stable = cA > 0 and cB > 0 and 1 / factor <= cB / cA <= factor
    lhs = ratios
    rhs = np.full(ratios.size, factor * cA)
    ok = bool(stable and np.all(lhs <= rhs))
    return BoundCheck(f"{fit.name}:validate", lhs, rhs, fitted=cA, passed=ok,
                      info={"fitted_A": cA, "fitted_B": cB,
                            "stability": cB / cA if cA else float("nan")})


def _check_eps(eps: float, d: int) -> None:
    top = np.inf if d == 2 else 4 / (d - 2)
    if not 0 < eps < top:
        raise ValueError(f"eps must lie in (0, {top}) for d={d}")


def sobolev_terms(loc: LocalizedEnvironment, kappa: float, eps: float, f):
    """(lhs, shape) of the localized Sobolev inequality for each row of f."""
    d = loc.geometry.d
    _check_eps(eps, d)
    f = np.atleast_2d(np.asarray(f, dtype=float))
    if np.any(f < 0):
        raise ValueError("test functions must be nonnegative")
    R = loc.R
    q = 2 + eps
    lhs = ((f**q) @ loc.nuR) ** (2 / q)
    DRk = np.atleast_1d(dirichlet_form(loc, "DRk", f, kappa))
    shape = R ** (2 - d * eps / q) * DRk + R ** (-d * eps / q) * ((f**2) @ loc.nuR)
    return lhs, shape


def check_sobolev(loc: LocalizedEnvironment, kappa: float, eps: float, f_samples) -> BoundCheck:
    lhs, shape = sobolev_terms(loc, kappa, eps, f_samples)
    return ratio_check("sobolev", lhs, shape, {"R": loc.R, "kappa": kappa, "eps": eps})


def nash_terms(f, eps: float, g: Geometry):
    """(lhs, shape) with shape = D0^{a} (sum f^2)^{1-a}, a = eps d / (2 (2 + eps))."""
    d = g.d
    _check_eps(eps, d)
    f = np.atleast_2d(np.asarray(f, dtype=float))
    if np.any(f < 0):
        raise ValueError("test functions must be nonnegative")
    q = 2 + eps
    a = eps * d / (2 * q)
    lhs = ((f**q).sum(axis=1)) ** (2 / q)
    D0 = np.atleast_1d(simple_form(f, g))
    shape = D0**a * ((f**2).sum(axis=1)) ** (1 - a)
    return lhs, shape


def check_nash(f_samples, eps: float, g: Geometry) -> BoundCheck:
    """Fitted multiplier K = (c(d) (2 + eps))^{eps d / (2 + eps)}; info holds c(d)."""
    lhs, shape = nash_terms(f_samples, eps, g)
    chk = ratio_check("nash", lhs, shape, {"eps": eps, "d": g.d})
    q = 2 + eps
    K = chk.fitted
    chk.info["c_d"] = K ** (q / (eps * g.d)) / q if K > 0 else 0.0
    return chk


def exit_tail_check(taus, R: int, t_grid) -> BoundCheck:
    """Fit c in P(tau <= t) <= c t / R^2 from exit-time samples."""
    taus = np.sort(np.asarray(taus, dtype=float))
    t_grid = np.asarray(t_grid, dtype=float)
    emp = np.searchsorted(taus, t_grid, side="right") / taus.size
    return ratio_check("exit_tail", emp, t_grid / R**2, {"R": R, "t": t_grid.tolist()})


def exit_tail_stability(checks, factor: float = 2.0) -> BoundCheck:
    """All fitted exit constants within ``factor`` of each other."""
    cs = np.array([c.fitted for c in checks])
    ok = bool(cs.min() > 0 and cs.max() / cs.min() <= factor)
    return BoundCheck("exit_tail:stability", [cs.max() / cs.min()], [factor],
                      fitted=float(cs.max()), passed=ok,
                      info={"R": [c.info["R"] for c in checks], "fitted": cs.tolist()})
