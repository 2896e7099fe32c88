import csv
import json

import numpy as np
import pytest

from clab.analysis import (
    BoundCheck, VerificationReport, check_hk_bounds, check_nash, check_sobolev,
    dirichlet_form, exit_tail_check, exit_tail_stability, expm_oracle, fit_then_validate,
    heat_kernel_exact, killed_kernel_check, localization_bounds, mollifier, qip_stats,
    ratio_check, scan_lrp_events, trap_probability_mc,
)
from clab.analysis.bounds import nash_terms, sobolev_terms
from clab.analysis.events import gamma_window
from clab.analysis.forms import simple_form
from clab.analysis.kernels import generator, uniformized
from clab.corrector import assemble
from clab.env import Environment, TrapSpec, constant, localize, nearest_neighbor_edges, \
    plant_long_edge, sample_iid_nn, sample_lrp, sample_stable_like
from clab.lattice import Geometry, ball


# -- forms -----------------------------------------------------------------------


def test_form_indicator():
    env = constant(Geometry(2, 8))
    f = np.zeros(64)
    f[10] = 1
    assert dirichlet_form(env, "D", f) == 8
    assert dirichlet_form(env, "D0", f) == 8 == simple_form(f, env.geometry)
    assert dirichlet_form(env, "D1", f) == 8


def test_form_matches_operator():
    env = sample_iid_nn("uniform:1,2", Geometry(2, 4), 2)
    f = np.random.default_rng(1).normal(size=16)
    assert dirichlet_form(env, "D", f) == pytest.approx(2 * assemble(env).quadratic_form(f),
                                                        abs=1e-12)


def test_form_monotone_in_truncation():
    env = sample_lrp(2.5, Geometry(2, 40), 3)
    loc = localize(env, 4)
    rng = np.random.default_rng(2)
    F = (rng.random((20, env.geometry.n_sites)) < 0.3).astype(float)
    Dk = dirichlet_form(loc, "DRk", F, 0.5)
    DR = dirichlet_form(loc, "DR", F)
    D = dirichlet_form(env, "D", F)
    assert Dk.shape == (20,)
    assert np.all(Dk <= DR + 1e-12)
    # 0-1 functions supported far from the origin see unit weights in C^R
    inner = localize(env, 4).in_ball(8)
    G = F * inner
    assert np.all(dirichlet_form(loc, "DR", G) <= dirichlet_form(env, "D", G) + 1e-12)
    assert D.shape == (20,)
    with pytest.raises(ValueError):
        dirichlet_form(env, "DR", F)
    with pytest.raises(ValueError):
        dirichlet_form(loc, "DRk", F)
    with pytest.raises(ValueError):
        dirichlet_form(env, "Q", F)


def test_mollifier():
    g = Geometry(2, 40)
    phi = mollifier(2, g)
    assert phi((8, 0)) == 1 and phi((0, 0)) == 1
    assert phi((16, 3)) == 0 and phi((17, 17)) == 0
    u, v = nearest_neighbor_edges(g)
    vals = phi()
    assert np.abs(vals[u] - vals[v]).max() <= 1 / 4 + 1e-12
    with pytest.raises(ValueError):
        mollifier(3, g)


# -- Sobolev, Nash, localization ------------------------------------------------


def test_sobolev_indicator_closed_form():
    env = constant(Geometry(2, 24))
    loc = localize(env, 2)
    f = np.zeros(576)
    f[0] = 1
    eps, q = 1.0, 3.0
    lhs, shape = sobolev_terms(loc, 1.0, eps, f)
    assert lhs[0] == pytest.approx(4 ** (2 / q))
    assert shape[0] == pytest.approx(2 ** (2 - 2 * eps / q) * 8 + 2 ** (-2 * eps / q) * 4)
    z_lhs, z_shape = sobolev_terms(loc, 1.0, eps, np.zeros(576))
    assert z_lhs[0] == 0 and z_shape[0] == 0
    with pytest.raises(ValueError):
        sobolev_terms(loc, 1.0, eps, -f)
    with pytest.raises(ValueError):
        sobolev_terms(localize(constant(Geometry(3, 20)), 2), 1.0, 4.5, np.zeros(8000))


def test_sobolev_fit_then_validate():
    env = sample_lrp(3.0, Geometry(2, 40), 4)
    loc = localize(env, 4)
    rng = np.random.default_rng(5)
    n = env.geometry.n_sites
    mask = loc.in_ball(8)

    def draw(k):
        return rng.random((k, n)) * (rng.random((k, n)) < 0.2) * mask

    a = check_sobolev(loc, 0.5, 1.0, draw(500))
    b = check_sobolev(loc, 0.5, 1.0, draw(500))
    v = fit_then_validate(a, b)
    assert v.passed, v.info


def test_nash_indicator_and_homogeneity():
    g = Geometry(2, 16)
    f = np.zeros(256)
    f[0] = 1
    eps = 1.0
    lhs, shape = nash_terms(f, eps, g)
    a = eps * 2 / (2 * 3)
    assert lhs[0] == pytest.approx(1) and shape[0] == pytest.approx(8**a)
    F = np.random.default_rng(0).random((5, 256))
    l1, s1 = nash_terms(F, eps, g)
    l2, s2 = nash_terms(3.0 * F, eps, g)
    assert np.allclose(l2 / s2, l1 / s1)
    chk = check_nash(F, eps, g)
    assert chk.fitted == pytest.approx((l1 / s1).max())
    assert chk.info["c_d"] > 0
    with pytest.raises(ValueError):
        check_nash(F, 0.0, g)


def test_localization_bounds_hold_on_samples():
    g = Geometry(2, 72)
    for env in (sample_lrp(2.5, g, 1), sample_stable_like(3.0, g, 1)):
        for R in (4, 8):
            for b0, b in localization_bounds(env, R, [0.25, 0.5, 1.0]):
                assert b0.passed and b.passed, (b0.as_dict(), b.as_dict())
    with pytest.raises(ValueError):
        localization_bounds(constant(g), 2, [0.25])


def test_ratio_and_stability_protocol():
    a = ratio_check("x", [1, 2, 0], [1, 1, 0])
    assert a.fitted == 2 and a.passed
    with pytest.raises(ValueError):
        ratio_check("x", [1], [0])
    b = ratio_check("x", [1, 3], [1, 1])
    assert fit_then_validate(a, b).passed
    c = ratio_check("x", [5], [1])
    assert not fit_then_validate(a, c).passed


def test_exit_tail_check():
    taus = np.array([1.0, 2.0, 4.0, 8.0])
    chk = exit_tail_check(taus, 2, [1.0, 2.0, 4.0])
    assert chk.info["ratios"] == pytest.approx([1.0, 1.0, 0.75])
    assert exit_tail_stability([chk, chk]).passed


# -- heat kernels ------------------------------------------------------------------


def test_kernel_identity_at_zero():
    env = constant(Geometry(2, 16))
    tab = heat_kernel_exact(env, ball(0, 3, env.geometry), 0.0)
    assert np.array_equal(tab.p, np.eye(49))
    with pytest.raises(ValueError):
        heat_kernel_exact(env, None, -1.0)


def test_row_sums_and_balance():
    env = sample_stable_like(3.0, Geometry(2, 16), 2, r_max=3)
    dom = ball(0, 3, env.geometry)
    for t in (0.5, 4.0):
        free = heat_kernel_exact(env, dom, t)
        assert np.abs(free.row_sums() - 1).max() <= 1e-9
        assert free.balance_defect() <= 1e-9
        killed = heat_kernel_exact(env, dom, t, killed=True)
        assert np.all(killed.row_sums() <= 1 + 1e-12) and killed.row_sums().min() < 1
        assert killed.balance_defect() <= 1e-9
        assert killed.p.min() >= 0


def test_uniformization_matches_expm():
    env = sample_stable_like(3.0, Geometry(2, 8), 7, r_max=3)
    dom = np.arange(20)
    for killed in (False, True):
        Q, _, _ = generator(env, "Y", dom, killed)
        for t in (0.3, 2.0, 7.5):
            assert np.abs(uniformized(Q, t) - expm_oracle(Q, t)).max() <= 1e-9


def test_semigroup():
    env = sample_iid_nn("uniform:1,2", Geometry(2, 8), 1)
    Q, _, _ = generator(env, "Y", None)
    a, b = uniformized(Q, 1.5), uniformized(Q, 2.5)
    assert np.abs(a @ b - uniformized(Q, 4.0)).max() <= 1e-8


def test_localized_variants():
    env = sample_lrp(2.5, Geometry(2, 20), 6)
    loc = localize(env, 2)
    for variant, kw in (("YR", {}), ("YRk", {"kappa": 0.5})):
        tab = heat_kernel_exact(loc, None, 1.0, variant=variant, sources=[0, 5], **kw)
        assert np.abs(tab.row_sums() - 1).max() <= 1e-9
        assert tab.balance_defect() <= 1e-9
        assert np.array_equal(tab.weights, loc.nuR)
    with pytest.raises(ValueError):
        generator(env, "YR")
    with pytest.raises(ValueError):
        generator(loc, "YRk")
    with pytest.raises(ValueError):
        heat_kernel_exact(constant(Geometry(2, 64)), None, 1.0)


def test_hk_bounds_constant_env():
    env = constant(Geometry(2, 20))
    out = check_hk_bounds(env, 2, 1.0, [1.0, 2.0, 4.0], sources=[0], reach=4)
    assert out["diag"].fitted > 0 and out["diag"].passed
    assert out["monotone"].passed
    assert out["offdiag"].fitted < 0
    with pytest.raises(ValueError):
        check_hk_bounds(env, 2, 1.0, [5.0])


def test_killed_kernel_check():
    env = constant(Geometry(2, 24))
    chk = killed_kernel_check(env, 3, [0.25, 1.0])
    assert chk.fitted > 0 and chk.instances == 2 * 49**2
    with pytest.raises(ValueError):
        killed_kernel_check(env, 3, [1.5])


# -- QIP ----------------------------------------------------------------------------


def test_qip_constant_env():
    env = constant(Geometry(2, 64))
    st = qip_stats(env, 400, 1000, [0.5, 1.0], 0.5 * np.eye(2), 3)
    assert st.samples.shape == (2, 1000, 2)
    assert st.cov_rel_error() < 0.15
    rho = st.increment_correlation(0, 1)
    assert np.all(np.abs(rho) <= 3 / np.sqrt(1000))
    assert np.all(st.ks_p > 0.01)
    assert json.dumps(st.summary())
    with pytest.raises(ValueError):
        qip_stats(env, 400, 50, [1.0], np.eye(2), 1)
    with pytest.raises(ValueError):
        qip_stats(env, 400, 200, [0.0001], np.eye(2), 1)


# -- LRP events ---------------------------------------------------------------------


def test_gamma_window():
    lo, hi = gamma_window(5.5, 3)
    assert lo == pytest.approx(2.5 / 3) and hi == 1.0
    with pytest.raises(ValueError):
        scan_lrp_events(constant(Geometry(3, 32)), Geometry(3, 32), 4, 0.5, 5.5)


def test_planted_edge_witness():
    g = Geometry(2, 24)
    x, y = g.index((1, 0)), g.index((5, 2))
    env = plant_long_edge(constant(g), x, y)
    scan = scan_lrp_events(env, g, 4, 0.5, 2.5)
    assert scan.A_n and (x, y) in scan.a_witnesses
    assert not scan.B_n
    assert scan.as_dict()["A_n"] is True


def test_double_edge_breaks_event():
    g = Geometry(2, 24)
    u, v = nearest_neighbor_edges(g)
    y = g.index((5, 2))
    xs = [g.index((1, 0)), g.index((0, 1))]
    env = Environment.from_edges(g, np.append(u, xs), np.append(v, [y, y]),
                                 np.ones(u.size + 2))
    scan = scan_lrp_events(env, g, 4, 0.5, 2.5)
    assert not scan.A_n
    assert scan.B_n and scan.b_witness[1] == scan.b_witness[3] == y


def test_b_event_adjacent_and_linked_targets():
    g = Geometry(2, 24)
    x1, x2 = g.index((0, 0)), g.index((1, 1))
    y1, y2 = g.index((6, 0)), g.index((6, 1))
    scan = scan_lrp_events((np.array([x1, x2]), np.array([y1, y2])), g, 4, 0.5, 2.5)
    assert scan.B_n
    y3 = g.index((0, 7))
    scan = scan_lrp_events((np.array([x1, x2, y1]), np.array([y1, y3, y3])), g, 4, 0.5, 2.5)
    assert scan.B_n and {scan.b_witness[1], scan.b_witness[3]} == {y1, y3}
    far = scan_lrp_events((np.array([x1, x2]), np.array([y1, y3])), g, 4, 0.5, 2.5)
    assert not far.B_n and far.A_n


# -- trap Monte Carlo ---------------------------------------------------------------


def _trap_probability_exact(spec, k):
    """P(ell = k) P(m < k) from the product formula over Lambda shells."""
    d, L, K = spec.d, spec.schedule, spec.k_max

    def size(j):
        return (6 * L[j - 1] + 1) * (2 * d - 1) - 1

    def keep(j):  # P(ell(y) < j)
        return np.prod([1 - float(L[r - 1]) ** -d for r in range(j, K + 1)])

    p_ell = float(L[k - 1]) ** -d * keep(k + 1)
    p_m = keep(k) ** size(k)
    for j in range(k + 1, K + 1):
        p_m *= keep(j) ** (size(j) - size(j - 1))
    return p_ell * p_m


def test_trap_probability_mc():
    spec = TrapSpec(3, 1.5, 1.5, 1.9, 1.9)
    k2 = trap_probability_mc(spec, 2, 200_000, 1)
    assert k2.rhs[0] == pytest.approx(1 / 27)
    assert k2.passed
    assert abs(k2.info["corr_ell_m"]) <= 3 * k2.info["corr_sigma"]
    for k, chk in ((2, k2), (3, trap_probability_mc(spec, 3, 200_000, 2))):
        lo, hi = chk.info["wilson"]
        assert lo <= _trap_probability_exact(spec, k) <= hi
    with pytest.raises(ValueError):
        trap_probability_mc(spec, 1, 20_000, 1)
    with pytest.raises(ValueError):
        trap_probability_mc(spec, 2, 100, 1)


def test_trap_probability_decreasing_in_k():
    # with L = 1, 3, 9 the k = 2 event is rarer than k = 3; a sparser schedule restores the order
    spec = TrapSpec(3, 1.5, 1.5, 1.9, 1.9, schedule=(1, 5, 25))
    assert _trap_probability_exact(spec, 3) < _trap_probability_exact(spec, 2)
    k2 = trap_probability_mc(spec, 2, 100_000, 3)
    k3 = trap_probability_mc(spec, 3, 100_000, 4)
    assert k3.info["estimate"] < k2.info["estimate"]
    assert k3.info["wilson"][1] < k2.info["wilson"][0]


# -- report -------------------------------------------------------------------------


def test_report_serialisation(tmp_path):
    rep = VerificationReport()
    rep.add(BoundCheck("a", [1, 2], [2, 2]), BoundCheck("b", [3], [2], fitted=1.5))
    assert rep.checks[0].passed and not rep.checks[1].passed
    assert rep.failing() == ["b"] and not rep.passed
    rep.to_json(tmp_path / "r.json")
    rep.to_csv(tmp_path / "s.csv")
    data = json.load(open(tmp_path / "r.json"))
    assert data[1]["margin"] == [-1.0] and data[1]["fitted_constant"] == 1.5
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["name", "instances", "worst_margin", "fitted_constant", "pass"]
    assert rows[1][:2] == ["a", "2"]
    with pytest.raises(ValueError):
        BoundCheck("c", [1], [1, 2])
