import json
import math

import numpy as np
import pytest
from scipy.integrate import quad

from sbmocc import moments as M
from sbmocc.kernel import ConfigurationError, DimensionParams, DomainError

P4 = DimensionParams(4)


def tables(d, eps, p_max, s_max=2.0, per_decade=256):
    P = DimensionParams(d)
    spec = M.TestFunctionSpec(d, eps)
    return M.build_tables(P, spec, M.RadialGrid.build(eps, s_max, per_decade), p_max)


@pytest.fixture(scope="module")
def t4():
    return tables(4, 0.1, 3)


def m1_d4(eps, r):
    return eps**2 / 2 - r * r / 4 if r < eps else eps**4 / (4 * r * r)


def m2_quad(eps, s):
    """Second moment from the radial Green formula, evaluated with adaptive quadrature."""
    F = lambda r: 2 * m1_d4(eps, r) ** 2
    inner = quad(lambda r: F(r) * r**3, 0, s, points=[eps] if s > eps else None, limit=200)[0]
    outer = quad(lambda r: F(r) * r, s, np.inf, limit=200)[0] if s >= eps else (
        quad(lambda r: F(r) * r, s, eps)[0] + quad(lambda r: F(r) * r, eps, np.inf)[0])
    return inner / s**2 + outer


def test_phi_bar():
    assert M.TestFunctionSpec(4).phi_bar == pytest.approx(math.pi**2 / 2, rel=1e-13)
    assert M.TestFunctionSpec(4, shape_name="bump").phi_bar == pytest.approx(math.pi**2 / 12, rel=1e-13)
    with pytest.raises(ConfigurationError):
        M.TestFunctionSpec(4, shape_name="nope")
    with pytest.raises(DomainError):
        M.TestFunctionSpec(4, shape=lambda r: 2.0 * np.ones_like(r))


@pytest.mark.parametrize("s", [0.0, 0.03, 0.1, 0.5, 100.0])
def test_first_moment_closed_form(s):
    got = M.first_moment_at(P4, M.TestFunctionSpec(4, 0.1), s)
    assert got == pytest.approx(m1_d4(0.1, s), rel=1e-12)


@pytest.mark.parametrize("s", [0.05, 0.3, 2.0])
def test_second_moment_against_quadrature(t4, s):
    assert t4[1].value_at(s) == pytest.approx(m2_quad(0.1, s), rel=1e-5)


def test_first_moment_d5_quadrature():
    P = DimensionParams(5)
    spec = M.TestFunctionSpec(5, 1.0)
    s = 0.4
    ref = P.c_d * P.omega_d * (s**-3 * quad(lambda r: r**4, 0, s)[0] + quad(lambda r: r, s, 1)[0])
    assert M.first_moment_at(P, spec, s) == pytest.approx(ref, rel=1e-12)


def test_second_moment_closed_form_at_unit_distance():
    for eps in (1e-2, 1e-3):
        t = tables(4, eps, 2, s_max=1.0, per_decade=512)[1]
        exact = eps**8 * (math.log(1 / eps) / 8 + 22 / 384 + 1 / 16)
        assert t.value_at(1.0) == pytest.approx(exact, rel=1e-5)
        ratio = M.d4_asymptotic_ratio(t, 1.0)
        assert ratio == pytest.approx(1 + 8 * (22 / 384 + 1 / 16) / math.log(1 / eps), rel=1e-5)


def test_tables_nonincreasing(t4):
    for t in t4:
        assert np.all(np.diff(t.values) <= 0)


def test_symmetric_recursion_agrees(t4):
    sym = M.moment_recursion(t4[:2], 3, symmetric=True)
    assert np.allclose(sym.values, t4[2].values, rtol=1e-13)


@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_scaling_covariance(lam):
    base = tables(4, 0.01, 3, s_max=1.0)
    P = DimensionParams(4)
    spec = M.TestFunctionSpec(4, 0.01 * lam)
    scaled = M.build_tables(P, spec, base[0].grid.scaled(lam), 3)
    for a, b in zip(base, scaled):
        assert np.allclose(b.values, lam ** (4 * a.p - 2) * a.values, rtol=1e-10)


def test_quadrature_error_estimate_small(t4):
    assert all(t.quad_error < 1e-4 for t in t4[1:])


@pytest.mark.parametrize("d", [5, 6, 7])
def test_a_d_closed_form(d):
    expected = 2 / (d - 2) * max(0.5 + 1 / (2 * d - 6), 1 / d + 1 / (d - 4))
    assert M.a_d_constant(DimensionParams(d)) == pytest.approx(expected, rel=1e-4)


def test_a_d_undefined_in_d4():
    with pytest.raises(DomainError):
        M.a_d_constant(P4)


@pytest.mark.parametrize("d", [5, 6])
def test_c1(d):
    tc = M.tech_constants(DimensionParams(d), 4)
    # sup over grid nodes, so only node-spacing accuracy
    assert tc.C[0] == pytest.approx(1 / (d - 2), rel=1e-6)
    assert tc.C[1] == pytest.approx(tc.a_d * tc.C[0] ** 2)
    assert tc.K_d == pytest.approx(max(tc.growth_sequence()))


def test_d5_bound_holds():
    P = DimensionParams(5)
    ts = tables(5, 1.0, 4, s_max=1.0, per_decade=128)
    tc = M.tech_constants(P, 4)
    env = np.minimum(ts[0].nodes ** -3.0, 1.0)
    for t in ts:
        assert np.all(t.values <= tc.C[t.p - 1] * math.factorial(t.p) * env * (1 + 1e-9))


def test_limit_moments_two_ways():
    ts = tables(5, 1.0, 3, s_max=1e3, per_decade=128)
    kappa = 7.2973
    lim = M.highdim_limit_moments(ts, kappa)
    direct = M.direct_conditioned_moments(ts, kappa, 1e3)
    assert np.allclose(direct, lim.m, rtol=0.02)
    assert lim.m[0] == pytest.approx(DimensionParams(5).c_d / kappa * 2 * ts[0].spec.phi_bar)


def test_limit_moment_errors(t4):
    with pytest.raises(DomainError):
        M.highdim_limit_moments(t4, 1.0)
    with pytest.raises(ConfigurationError):
        M.highdim_limit_moments(t4, None)
    with pytest.raises(DomainError):
        M.d4_asymptotic_ratio(t4[1], 0.1)


def test_value_below_grid_uses_inner_expansion(t4):
    # the source is frozen at its r_0 value below the grid: O((r_0/eps)^2) on the inner piece
    s = t4[1].grid.r0 / 2
    assert t4[1].value_at(s) == pytest.approx(m2_quad(0.1, s), rel=1e-4)


def test_export(tmp_path, t4):
    M.tables_to_csv(t4, tmp_path / "m.csv")
    data = np.loadtxt(tmp_path / "m.csv", delimiter=",", skiprows=1)
    assert data.shape == (t4[0].grid.n, 4)
    assert np.allclose(data[:, 2], t4[1].values, rtol=1e-12)
    M.tables_to_json(t4, tmp_path / "m.json")
    meta = json.loads((tmp_path / "m.json").read_text())
    assert json.dumps(meta)


def test_second_moment_four_dimensional_monte_carlo(t4):
    """M_2(x) = 2 int G(x, z) M_1(|z|)^2 dz by Monte Carlo over R^4 at |x| = 2, eps = 0.1."""
    eps, s, n_total = 0.1, 2.0, 10_000_000
    rng = np.random.default_rng(123)
    m1 = np.vectorize(lambda r: m1_d4(eps, r))
    # radial proposal ~ r^3 M_1(r)^2 max(r, s)^-2 on [0, 1e4], sampled by inverse CDF
    grid = np.concatenate([[0.0], np.geomspace(1e-6, 1e4, 200_001)])
    dens = grid**3 * m1(grid) ** 2 / np.maximum(grid, s) ** 2
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    norm = cdf[-1]
    c4 = 1 / (2 * math.pi**2)
    omega4 = 2 * math.pi**2
    vals = []
    for _ in range(10):
        n = n_total // 10
        r = np.interp(rng.uniform(0, norm, n), cdf, grid)
        u = rng.standard_normal((n, 4))
        z = r[:, None] * u / np.linalg.norm(u, axis=1, keepdims=True)
        z[:, 0] -= s
        sep2 = np.einsum("ij,ij->i", z, z)
        q = np.interp(r, grid, dens) / norm  # radial density of the proposal
        f = 2 * c4 / sep2 * m1(r) ** 2 * omega4 * r**3
        vals.append(f / q)
    v = np.concatenate(vals)
    est, se = v.mean(), v.std() / math.sqrt(v.size)
    assert abs(est - t4[1].value_at(s)) < 4 * se


def test_c3_by_hand():
    tc = M.tech_constants(DimensionParams(5), 3)
    assert tc.C[2] == pytest.approx(2 * tc.a_d**2 * tc.C[0] ** 3)


def test_growth_certificate_stabilises():
    tc = M.tech_constants(DimensionParams(5), 10)
    # the recursion is Catalan's: C_p = a^(p-1) C_1^p Cat(p-1), so C_p^(1/p) rises to 4 a C_1
    cat = [math.comb(2 * k, k) // (k + 1) for k in range(10)]
    expected = [tc.a_d ** (p - 1) * tc.C[0] ** p * cat[p - 1] for p in range(1, 11)]
    assert np.allclose(tc.C, expected, rtol=1e-12)
    g = tc.growth_sequence()
    assert np.all(np.diff(np.diff(g[2:])) < 0) and g[-1] < 4 * tc.a_d * tc.C[0]
    assert tc.K_d == pytest.approx(g[-1])


def test_scaling_covariance_lambda_ten():
    base = tables(4, 0.01, 2, s_max=1.0, per_decade=128)
    scaled = M.build_tables(DimensionParams(4), M.TestFunctionSpec(4, 0.1), base[0].grid.scaled(10.0), 2)
    assert np.allclose(scaled[1].values, 10.0**6 * base[1].values, rtol=1e-10)
