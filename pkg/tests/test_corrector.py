import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clab.corrector import (
    CorrectorField, SolverError, assemble, covariance_sigma, drift, harmonic_residual,
    sigma_json, solve_corrector, solve_corrector_dense, sublinearity_profile,
    trap_energy_check,
)
from clab.env import EnvError, Environment, TrapSpec, constant, nearest_neighbor_edges, \
    plant_trap, sample_iid_nn, sample_lrp, sample_stable_like
from clab.lattice import Geometry
from clab.walk import batch_positions


def test_assemble_basis_action():
    env = constant(Geometry(2, 8))
    gm = assemble(env)
    e = np.zeros(64)
    e[9] = 1
    Le = gm.apply(e)
    assert Le[9] == -4
    assert all(Le[y] == 1 for y in env.geometry.neighbors(9))
    assert np.allclose(gm.apply(np.ones(64)), 0)
    assert gm.quadratic_form(e) == pytest.approx(env.pi[9])


def test_quadratic_form_brute_force():
    env = sample_stable_like(3.0, Geometry(2, 8), 3, r_max=3)
    C = env.matrix().toarray()
    f = np.random.default_rng(0).normal(size=64)
    brute = 0.5 * sum(C[x, y] * (f[y] - f[x]) ** 2 for x in range(64) for y in range(64))
    assert assemble(env).quadratic_form(f) == pytest.approx(brute, abs=1e-12 * abs(brute) + 1e-12)
    offdiag = assemble(env).L.toarray() - np.diag(assemble(env).L.diagonal())
    assert np.allclose(offdiag.sum(axis=1), env.pi)


def test_constant_env_corrector_vanishes():
    for d in (2, 3):
        cf = solve_corrector(constant(Geometry(d, 8)))
        assert np.abs(cf.chi).max() <= 1e-10
    S2 = covariance_sigma(constant(Geometry(2, 8)), solve_corrector(constant(Geometry(2, 8))))
    S3 = covariance_sigma(constant(Geometry(3, 6)), solve_corrector(constant(Geometry(3, 6))))
    assert np.allclose(S2, 0.5 * np.eye(2)) and np.allclose(S3, np.eye(3) / 3)


def test_layered_env_first_component_zero():
    g = Geometry(2, 16)
    u, v = nearest_neighbor_edges(g)
    rows = np.random.default_rng(3).uniform(1, 3, g.side)
    horizontal = np.arange(u.size) < g.n_sites
    w = np.where(horizontal, rows[g.coords(u)[:, 1]], 1.0)
    env = Environment.from_edges(g, u, v, w)
    cf = solve_corrector(env)
    assert np.abs(cf.chi[:, 0]).max() <= 1e-9


@pytest.mark.parametrize("d,side,seed", [(2, 4, 0), (2, 4, 1), (3, 4, 2)])
def test_pcg_matches_dense_oracle(d, side, seed):
    env = sample_iid_nn("uniform:1,2", Geometry(d, side), seed)
    it = solve_corrector(env)
    de = solve_corrector_dense(env)
    assert np.abs(it.chi - de.chi).max() <= 1e-8
    assert np.abs(covariance_sigma(env, it) - covariance_sigma(env, de)).max() <= 1e-8
    assert it.chi[0].tolist() == [0.0] * d
    assert it.residual <= it.tol * it.scale


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.sampled_from([2, 3]))
def test_solver_oracle_on_small_tori(seed, d):
    env = sample_stable_like(3.5, Geometry(d, 4), seed, r_max=1.5)
    assert np.abs(solve_corrector(env).chi - solve_corrector_dense(env).chi).max() <= 1e-8


def test_gauge_invariance():
    env = sample_iid_nn("uniform:1,2", Geometry(2, 8), 5)
    cf = solve_corrector(env)
    shifted = cf.chi + np.array([3.5, -1.25])
    assert abs(harmonic_residual(env, shifted) - harmonic_residual(env, cf.chi)) <= 1e-12
    assert np.abs(covariance_sigma(env, shifted) - covariance_sigma(env, cf)).max() <= 1e-12


def test_sigma_symmetric_psd_and_shape_check():
    env = sample_lrp(3.0, Geometry(2, 16), 2)
    S = covariance_sigma(env, solve_corrector(env))
    assert np.allclose(S, S.T)
    assert np.linalg.eigvalsh(S).min() >= -1e-9
    with pytest.raises(EnvError):
        covariance_sigma(env, np.zeros((10, 2)))
    assert json.loads(sigma_json(S))["d"] == 2


def test_sigma_offdiagonal_small():
    for seed in range(5):
        env = sample_iid_nn("uniform:1,2", Geometry(2, 32), 100 + seed)
        S = covariance_sigma(env, solve_corrector(env))
        assert abs(S[0, 1]) <= 0.05


def test_solver_errors():
    g = Geometry(2, 8)
    u, v = nearest_neighbor_edges(g)
    c, cv = g.coords(u), g.coords(v)
    horizontal = np.arange(u.size) < g.n_sites
    cut = horizontal & (((c[:, 0] == 0) & (cv[:, 0] == 1)) | ((c[:, 0] == 4) & (cv[:, 0] == 5)))
    env = Environment.from_edges(g, u[~cut], v[~cut], np.ones((~cut).sum()))
    with pytest.raises(EnvError):
        solve_corrector(env)
    rough = sample_iid_nn("lognormal:0,2", Geometry(2, 16), 1)
    with pytest.raises(SolverError):
        solve_corrector(rough, max_iter=2)
    loose = solve_corrector(rough, max_iter=2, strict=False)
    assert loose.residual > loose.tol * loose.scale
    with pytest.raises(ValueError):
        solve_corrector(rough, tol=0)


def test_corrector_csv(tmp_path):
    env = sample_iid_nn("uniform:1,2", Geometry(2, 4), 0)
    cf = solve_corrector(env)
    cf.to_csv(tmp_path / "chi.csv")
    rows = list(csv.reader(open(tmp_path / "chi.csv")))
    assert rows[0] == ["site_index", "chi_1", "chi_2"] and len(rows) == 17
    assert np.allclose(np.array(rows[1:], dtype=float)[:, 1:], cf.chi, atol=0)


def test_drift_antisymmetry():
    env = sample_lrp(2.5, Geometry(2, 16), 8)
    assert np.allclose(drift(env).sum(axis=0), 0)


def test_profile_zero_field():
    env = constant(Geometry(2, 16))
    cf = CorrectorField(np.zeros((256, 2)), 0.0, 1.0, 1e-10)
    prof = sublinearity_profile(env, cf, [1, 4, 8], [0.1, 0.5])
    assert prof.density == [[0.0, 0.0]] * 3 and prof.max_ratio == [0.0] * 3
    with pytest.raises(ValueError):
        sublinearity_profile(env, cf, [9], [0.1])


def test_profile_counts_brute_force():
    env = sample_iid_nn("lognormal:0,1", Geometry(2, 16), 4)
    cf = solve_corrector(env)
    g = env.geometry
    c = g.index((3, 5))
    prof = sublinearity_profile(env, cf, [2, 5], [0.05], center=c)
    for i, n in enumerate([2, 5]):
        size = [np.linalg.norm(cf.chi[x] - cf.chi[c]) for x in range(g.n_sites)
                if np.abs(g.reduce(g.coords(x) - g.coords(c))).max() <= n]
        assert prof.density[i][0] == sum(s > 0.05 * n for s in size) / n**2
        assert prof.max_ratio[i] == pytest.approx(max(size) / n)
        assert 0 <= prof.density[i][0] <= (2 * n + 1) ** 2 / n**2


def test_profile_decreasing_on_uniform():
    for seed in range(5):
        env = sample_iid_nn("uniform:1,2", Geometry(2, 64), 200 + seed)
        prof = sublinearity_profile(env, solve_corrector(env), [4, 8, 16, 32], [0.1])
        assert np.all(np.diff(prof.max_ratio) < 0)


def test_psi_martingale_surrogate():
    env = sample_iid_nn("lognormal:0,1", Geometry(2, 16), 6)
    cf = solve_corrector(env)
    g = env.geometry
    pos = batch_positions(env, 0, 1000, [10_000], 31)[0]
    sites = g.index(pos)
    incr = pos + cf.chi[sites] - cf.chi[0]
    m, se = incr.mean(axis=0), incr.std(axis=0, ddof=1) / np.sqrt(incr.shape[0])
    assert np.all(np.abs(m) <= 3 * se)


# -- trap energies ----------------------------------------------------------------


def test_trap_energy_unit_scale():
    spec = TrapSpec(3, 1.5, 1.5, 1.9, 1.9)
    g = Geometry(3, 16)
    env = constant(g)
    cf = solve_corrector(env)
    rep = trap_energy_check(env, cf, spec, 0, 1)
    # psi is the identity map: one interior edge plus 2 + 2(d-1)2 fringe edges, each of unit gradient
    assert rep.energy == pytest.approx(1 + 2 + 8)
    assert rep.lower == pytest.approx(1.0) and rep.lower_ok and rep.upper_ok


def test_trap_energy_linear_psi_is_tight():
    # lower bound is exact for psi linear on the segment when fringe weights vanish
    spec = TrapSpec(3, 1.5, 1.5, 1.9, 1.9)
    g = Geometry(3, 64)
    env = plant_trap(spec, 3, g.index((8, 8, 8)), g)
    L, b = 9, float(spec.b(9))
    chi = np.zeros((g.n_sites, 3))
    rep = trap_energy_check(env, chi, spec, g.index((8, 8, 8)), 3)
    assert rep.lower == pytest.approx(b / L * L**2)
    fringe_energy = float(spec.a(9)) * (2 + 2 * 2 * 10)
    assert rep.energy - fringe_energy == pytest.approx(rep.lower)


def test_trap_energy_planted_k3():
    spec = TrapSpec(3, 1.5, 1.5, 1.9, 1.9)
    g = Geometry(3, 64)
    x = g.index((8, 8, 8))
    env = plant_trap(spec, 3, x, g)
    cf = solve_corrector(env)
    rep = trap_energy_check(env, cf, spec, x, 3)
    assert rep.upper_ok and rep.lower_ok
    with pytest.raises(EnvError):
        trap_energy_check(env, cf, spec, g.index((20, 20, 20)), 3)
