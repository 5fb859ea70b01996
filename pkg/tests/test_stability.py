import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ibvplab import boundary as bd, cgo, geometry, spectral, stability as sb
from ibvplab.errors import EpsilonTooLarge, SmallnessViolated

BUMP = "exp(-((x+0.1)^2+y^2)/0.02-s^2/0.05)"


@pytest.fixture(scope="module")
def setup32(bumpy32):
    spec = spectral.dirichlet_eigs(bumpy32, bumpy32.nodes.shape[0] - 1)
    grid = cgo.CylinderGrid(bumpy32, ds=1 / 32)
    dg = bd.DomainGrid("cylinder", 1.0, 0.6, 17, 17, lam=bumpy32.lam)
    return bumpy32, spec, grid, dg


# ---------------------------------------------------------------------------
# Poisson majorant
# ---------------------------------------------------------------------------

def test_majorant_at_unit_height():
    assert sb.poisson_majorant(1.0, 1.0, 0.0, 1.0) == pytest.approx(-0.5, abs=1e-15)


@pytest.mark.parametrize("x", [-0.7, 0.0, 0.4])
def test_majorant_full_strength_on_segment(x):
    assert sb.poisson_majorant(2.0, 1.0, x, 1e-9) == pytest.approx(-2.0, abs=1e-8)


def test_majorant_large_x_decay():
    # arctan(x + d) - arctan(x - d) ~ 2 d / x^2
    for d in (0.3, 1.0):
        x = 1e4
        assert sb.poisson_majorant(1.5, d, x, 1.0) * x * x / -1.5 == pytest.approx(2 * d / np.pi, rel=1e-6)


def test_majorant_matches_poisson_kernel_quadrature():
    xs = [-2.0, -1.0, -0.3, 0.0, 0.5, 1.0, 3.0]
    ys = [0.05, 0.25, 1.0, 2.0]
    for x in xs:
        for y in ys:
            u = sb.poisson_harmonic_quadrature(1.0, x, y)
            assert abs(-u - sb.poisson_majorant(1.0, 1.0, x, y)) < 1e-8


def test_majorant_rejects_boundary():
    with pytest.raises(ValueError):
        sb.poisson_majorant(1.0, 1.0, 0.0, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 5), st.floats(0.05, 2), st.floats(-3, 3), st.floats(0.05, 3))
def test_majorant_linear_in_b_and_between_minus_b_and_zero(b, d, x, y):
    m = sb.poisson_majorant(b, d, x, y)
    assert -b - 1e-12 <= m <= 0
    assert sb.poisson_majorant(2 * b, d, x, y) == pytest.approx(2 * m, rel=1e-12, abs=1e-300)


# ---------------------------------------------------------------------------
# Fourier slices
# ---------------------------------------------------------------------------

def test_slice_of_zero(disk32):
    fs = sb.fourier_slice(bd.Potential.zero(), 0.7 + 0.5j, disk32)
    assert not np.any(fs.values)


@pytest.mark.parametrize("sigma", [0.0, 1.3, -2.0, 0.5 + 1j])
def test_slice_of_narrow_bump(disk32, sigma):
    s0, w = 0.3, 0.01
    q = bd.Potential.from_expression(f"exp(-(x^2+y^2)/0.05-(s-{s0})^2/(2*{w}^2))")
    fs = sb.fourier_slice(q, sigma, disk32, n_s=4001)
    prof = bd.Potential.from_expression("exp(-(x^2+y^2)/0.05)")(0.0, disk32.nodes[:, 0], disk32.nodes[:, 1])
    mass = np.sqrt(2 * np.pi) * w
    # exact Gaussian transform, then the delta-like limit
    exact = np.exp(-1j * sigma * s0) * mass * np.exp(-(sigma * w) ** 2 / 2) * prof
    assert np.max(np.abs(fs.values - exact)) < 1e-9
    delta_like = np.exp(-1j * sigma * s0) * mass * prof
    assert np.max(np.abs(fs.values - delta_like)) < 1e-3 * mass


@settings(max_examples=10, deadline=None)
@given(st.floats(0.05, 6.0))
def test_slice_reality_symmetry(sigma):
    s = geometry.SimpleSurface.euclidean(16)
    q = bd.Potential.from_expression("exp(-(x^2+y^2)/0.05)*(1+s+s^2)*cos(3*s+x)")
    a = sb.fourier_slice(q, sigma, s).values
    b = sb.fourier_slice(q, -sigma, s).values
    assert np.max(np.abs(a - np.conj(b))) < 1e-13 * max(1.0, np.max(np.abs(a)))


def test_slice_growth_in_upper_half_plane(disk32):
    q = bd.Potential.from_expression(BUMP)
    l1 = np.abs(sb.fourier_slice(q, 0.0, disk32).values)
    for eta in (0.25, 1.0):
        v = np.abs(sb.fourier_slice(q, 2.0 + 1j * eta, disk32).values)
        assert np.all(v <= np.exp(eta * q.s_max) * l1 + 1e-14)


# ---------------------------------------------------------------------------
# ray estimate
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("sigma", [0.0, 0.5])
def test_chart_form_equals_fan_form(bumpy32, sigma):
    f = lambda x, y: np.exp(-((x + 0.2) ** 2 + y**2) / 0.1)
    phi0 = np.pi
    fan = sb.single_point_fan(bumpy32, phi0, 512)
    a = sb.fan_form(bumpy32, f, sigma, fan)
    b = sb.chart_form(bumpy32, f, sigma, phi0)
    assert abs(a - b) < 1e-3 * abs(b)


def test_ray_estimate_zero(bumpy32):
    fan = geometry.build_fan(bumpy32, 16, 16, 0.05)
    recs, c = sb.ray_estimate(bd.Potential.zero(), bumpy32, fan, [4.0, 8.0], [0.0, 0.5], 1e-6, 4.0)
    assert c == 0.0 and all(r.lhs == 0.0 for r in recs)


def test_ray_rhs_selection_rule():
    k = sb.rate_k(1.0, 1.0)
    assert k == pytest.approx(4.4)
    eps = 1e-8
    tau = sb.tau_rule(eps, k)
    assert eps * np.exp(k * tau) == pytest.approx(np.sqrt(eps), rel=1e-12)


# ---------------------------------------------------------------------------
# low frequencies
# ---------------------------------------------------------------------------

def test_low_freq_zero(bumpy32):
    spec = spectral.dirichlet_eigs(bumpy32, 100)
    fan = geometry.build_fan(bumpy32, 32, 32, 0.05)
    recs, c, _ = sb.low_freq_bound(bd.Potential.zero(), 1e-8, 0.1, bumpy32, spec, fan, 4.4, 1.0)
    assert c == 0.0
    assert all(r.normal_hm2 == 0 and r.slice_hm3 == 0 and r.recovered_hm3 == 0 for r in recs)


def test_low_freq_rejects_large_epsilon(bumpy32):
    spec = spectral.dirichlet_eigs(bumpy32, 20)
    fan = geometry.build_fan(bumpy32, 8, 8, 0.05)
    k, K = 4.4, 1.0
    eps = 2 * sb.admissible_epsilon(k, K)
    with pytest.raises(EpsilonTooLarge):
        sb.low_freq_bound(bd.Potential.zero(), eps, 0.1, bumpy32, spec, fan, k, K)


# ---------------------------------------------------------------------------
# analytic extension
# ---------------------------------------------------------------------------

def test_extension_bound_vanishes_as_b_grows():
    vals = [sb.analytic_extension_bound(b, 0.3, 0.5, 1.0, 0.8) for b in (1, 10, 100, 1000)]
    assert np.all(np.diff(vals) < 0) and vals[-1] < 1e-20


def test_extension_bound_formula():
    b, d0, S = 2.0, 0.3, 0.8
    # at the frequency cut sigma = R_tilde = 1 the majorant is arctan(1 + d0) - arctan(1 - d0)
    expect = np.exp(S) * np.exp(-(b / np.pi) * (np.arctan(1 + d0) - np.arctan(1 - d0)))
    assert sb.analytic_extension_bound(b, d0, 1.0, 1.0, S) == pytest.approx(expect, rel=1e-14)
    at0 = np.exp(S) * np.exp(-(b / np.pi) * 2 * np.arctan(d0))
    assert sb.analytic_extension_bound(b, d0, 0.0, 1.0, S) == pytest.approx(at0, rel=1e-14)


def test_extension_check_oscillating_potential(disk32):
    spec = spectral.dirichlet_eigs(disk32, 20)
    q = bd.Potential.from_expression("exp(-(x^2+y^2)/0.05)*cos(6*s)*exp(-s^2/0.2)")
    sig = np.linspace(-5, 5, 41)
    for j in range(5):
        direct, bound, b = sb.extension_check(q, spec.eigenfields[:, j], disk32, 0.3, sig)
        assert b > 0
        assert np.all(direct <= bound * (1 + 1e-12))


def test_extension_requires_smallness():
    with pytest.raises(SmallnessViolated):
        sb.analytic_extension_bound(0.0, 0.3, 0.0, 1.0, 1.0)


# ---------------------------------------------------------------------------
# final modulus
# ---------------------------------------------------------------------------

def test_modulus_decreasing_in_b():
    eps = 10.0 ** -np.arange(4, 21)
    m = [sb.final_bound(e)["modulus"] for e in eps]
    b = [sb.final_bound(e)["b"] for e in eps]
    assert np.all(np.diff(b) > 0) and np.all(np.diff(m) < 0)


def test_modulus_exponent():
    eps = 10.0 ** -np.arange(4, 21, 2)
    lam = sb.LAMBDA
    assert sb.modulus_slope(eps, lam) == pytest.approx(-lam / 4, abs=0.02)


def test_final_bound_admissibility():
    with pytest.raises(EpsilonTooLarge):
        sb.final_bound(0.9, R=1.0)
    with pytest.raises(EpsilonTooLarge):
        sb.final_bound(1.5)
    fb = sb.final_bound(1e-10, R=1.0)
    assert fb["R_tilde"] ** 2 == pytest.approx(np.sqrt(fb["b"]))


# ---------------------------------------------------------------------------
# integral identity
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def cgo_pair(setup32):
    surf, spec, grid, _ = setup32
    omega = np.array([-1.0, 0.0])
    dist = cgo.polar_nodes(surf, omega)
    q1 = bd.Potential.from_expression("2*exp(-((x+0.2)^2+y^2)/0.01-s^2/0.02)")
    v1 = cgo.build_cgo(grid, spec, surf, omega, 8.0, 0.0, q1, -1, mode="discrete", dist=dist)
    v2 = cgo.build_cgo(grid, spec, surf, omega, v1.tau, 0.0, None, 1, mode="discrete", dist=dist)
    return q1, v1, v2


def test_identity_equal_potentials(cgo_pair):
    q1, v1, v2 = cgo_pair
    rep = sb.integral_identity_check(q1, q1, v1, v2, 0.0)
    assert rep.lhs == 0 and rep.rhs == 0 and rep.ratio == 0


def test_identity_lhs_symmetries(setup32, cgo_pair):
    grid = setup32[2]
    q1, v1, v2 = cgo_pair
    q0 = bd.Potential.zero()
    a = sb.integral_lhs(grid, q1, q0, v1, v2)
    assert sb.integral_lhs(grid, q1, q0, v2, v1) == pytest.approx(a, rel=1e-13)
    assert sb.integral_lhs(grid, q0, q1, v1, v2) == pytest.approx(-a, rel=1e-13)
    assert abs(a) > 0


def test_identity_against_measured_distance(setup32, cgo_pair):
    _, _, _, dg = setup32
    q1, v1, v2 = cgo_pair
    eps = bd.cauchy_dist(bd.dn_map(dg), bd.dn_map(dg, q1)).epsilon
    rep = sb.integral_identity_check(q1, bd.Potential.zero(), v1, v2, eps)
    assert eps > 0 and rep.h1_v1 > 0 and rep.h1_v2 > 0
    assert np.isfinite(rep.ratio) and rep.ratio > 0


# ---------------------------------------------------------------------------
# theorem-level sweep and the conformal chain
# ---------------------------------------------------------------------------

def test_linearized_distance_converges(setup32):
    dg = setup32[3]
    vals = sb.linearized_distance(dg, bd.Potential.from_expression(BUMP))
    r = [v for _, v in vals]
    assert abs(r[1] - r[2]) < 0.1 * abs(r[0] - r[1]) + 1e-3 * r[2]


def test_theorem_sweep_single_constant(setup32):
    surf, spec, grid, dg = setup32
    recs, c_fit, ok = sb.theorem_sweep(bd.Potential.from_expression(BUMP), [1e-4, 1e-8, 1e-12], [0.5, 1.0],
                                       dg, grid, spec, R=surf.diameter)
    assert ok and np.isfinite(c_fit) and c_fit > 0
    assert {r.source for r in recs} == {"measured", "synthetic"}
    assert all(r.c_fit == c_fit for r in recs)
    assert all(r.lhs_norm <= c_fit * r.rhs_bound * (1 + 1e-12) for r in recs)


def test_calderon_equal_factors(setup32):
    surf, spec, grid, dg = setup32
    c = bd.ConformalFactor.from_expression("exp(0.1*exp(-(x^2+y^2+s^2)/0.08))")
    ch = sb.calderon_postprocess(c, c, dg, grid, spec)
    for v in (ch.q_hm1, ch.q_l2_hm1, ch.q_l2_hm3, ch.q_l2, ch.w_h1, ch.w_sup, ch.w_l2, ch.c_sup_bound):
        assert v == 0
    assert all(ch.links.values())


def test_calderon_links(setup32):
    surf, spec, grid, dg = setup32
    c1 = bd.ConformalFactor.from_expression("exp(0.2*exp(-(x^2+y^2+s^2)/0.08))")
    c2 = bd.ConformalFactor.from_expression("1+0*x")
    ch = sb.calderon_postprocess(c1, c2, dg, grid, spec)
    assert ch.links == {"interpolation": True, "hm1_le_l2hm1": True, "elliptic": True, "embedding": True}
    assert ch.elliptic_error < 1e-3
