"""Finite-dimensional statistics of the rescaled discrete chain."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from clab.env.core import Environment
from clab.walk import batch_positions


@dataclass(eq=False)
class QipStats:
    n: int
    times: list
    samples: np.ndarray      # (len(times), trajectories, d): B^(n)(t_i)
    sigma: np.ndarray        # target covariance per unit time
    cov: np.ndarray          # (len(times), d, d): empirical covariance / t
    ks_stat: np.ndarray      # (len(times), d)
    ks_p: np.ndarray         # (len(times), d)

    @property
    def trajectories(self) -> int:
        return self.samples.shape[1]

    def cov_rel_error(self) -> float:
        """max over times and diagonal entries of |cov_ii / sigma_ii - 1|."""
        dg = np.diagonal(self.cov, axis1=1, axis2=2)
        return float(np.abs(dg / np.diag(self.sigma) - 1).max())

    def max_offdiag(self) -> float:
        d = self.sigma.shape[0]
        off = self.cov[:, ~np.eye(d, dtype=bool)]
        return float(np.abs(off).max()) if off.size else 0.0

    def increment_correlation(self, i: int, j: int) -> np.ndarray:
        """Per-component correlation of B(t_i) with B(t_j) - B(t_i), t_i < t_j."""
        a = self.samples[i]
        b = self.samples[j] - self.samples[i]
        return np.array([np.corrcoef(a[:, c], b[:, c])[0, 1] for c in range(a.shape[1])])

    def summary(self) -> dict:
        return {"n": self.n, "times": self.times, "trajectories": self.trajectories,
                "sigma": self.sigma.tolist(), "cov": self.cov.tolist(),
                "ks_stat": self.ks_stat.tolist(), "ks_p": self.ks_p.tolist(),
                "cov_rel_error": self.cov_rel_error(), "max_offdiag": self.max_offdiag()}


def qip_stats(env: Environment, n: int, trajectories: int, times, sigma, seed: int,
              x0=0) -> QipStats:
    """Sample B^(n)(t) = Z_{tn} / sqrt(n) (tn integer) for independent chains
    started at x0 and compare with N(0, t sigma) per component."""
    if trajectories < 100:
        raise ValueError("need at least 100 trajectories")
    times = [float(t) for t in times]
    steps = np.array([round(t * n) for t in times], dtype=np.int64)
    if np.any(steps <= 0) or np.any(np.abs(steps - np.asarray(times) * n) > 1e-9):
        raise ValueError("each t n must be a positive integer")
    sigma = np.asarray(sigma, dtype=float)
    pos = batch_positions(env, x0, trajectories, steps, seed)
    origin = env.geometry.coords(env.geometry.site(x0))
    samples = (pos - origin) / np.sqrt(n)
    d = samples.shape[2]
    cov = np.empty((len(times), d, d))
    ks_s = np.empty((len(times), d))
    ks_p = np.empty((len(times), d))
    for i, t in enumerate(times):
        x = samples[i]
        cov[i] = (x.T @ x) / (x.shape[0] * t)  # centred limit, so no mean subtraction
        for c in range(d):
            r = stats.kstest(x[:, c], "norm", args=(0.0, np.sqrt(t * sigma[c, c])))
            ks_s[i, c], ks_p[i, c] = r.statistic, r.pvalue
    return QipStats(int(n), times, samples, sigma, cov, ks_s, ks_p)
