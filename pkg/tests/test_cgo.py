import numpy as np
import pytest

from ibvplab import cgo, geometry, spectral
from ibvplab.errors import ChartMaskViolation, NoContraction, ResonantTau

OMEGA = np.array([1.0, 0.0])
BUMP_Q = lambda s, x, y: 0.5 * np.exp(-((x + 0.1) ** 2 + y**2) / 0.03 - s**2 / 0.1) * (
    np.hypot(x + 0.1, y) < 0.45) * (np.abs(s) < 0.8)


@pytest.fixture(scope="module")
def setup48():
    surf = geometry.SimpleSurface.euclidean(48)
    spec = spectral.dirichlet_eigs(surf, surf.nodes.shape[0] - 1)
    grid = cgo.CylinderGrid(surf, ds=1 / 32)
    return surf, spec, grid, cgo.polar_nodes(surf, OMEGA)


@pytest.mark.parametrize("sigma", [0.0, 0.5, -0.7])
def test_transport_factor_is_holomorphic(sigma):
    assert cgo.transport_factor_residual(sigma) < 1e-10


def test_amplitude_without_attenuation(disk32):
    chart = geometry.polar_chart(disk32, OMEGA, 30, 16)
    amp = cgo.amplitude(chart, 0.0)
    beta = cgo.BetaBump()
    ok = chart.valid
    rho = np.broadcast_to(chart.rho_grid[:, None], ok.shape)
    expect = rho ** -0.5 * beta(chart.theta_grid)[None, :]
    assert np.allclose(amp.a1[0][ok], expect[ok], rtol=1e-6)
    assert np.allclose(amp.a2[0][ok], rho[ok] ** -0.5, rtol=1e-6)


def test_beta_support_must_stay_in_chart(disk32):
    chart = geometry.polar_chart(disk32, OMEGA, 10, 8)
    with pytest.raises(ChartMaskViolation):
        cgo.amplitude(chart, 0.0, beta=cgo.BetaBump(width=np.pi / 2))


def test_eikonal_check_euclidean():
    s = geometry.SimpleSurface.euclidean(128)
    df = cgo.polar_nodes(s, OMEGA)
    assert geometry.eikonal_residual(s, df.psi, OMEGA, exclude=0.15) < 1e-2
    assert cgo.eikonal_check(s, OMEGA, df)[1] == 0.0


def test_zero_forcing_gives_zero(setup48):
    surf, spec, grid, _ = setup48
    w, _, norms = cgo.carleman_solve(grid, spec, np.zeros((grid.ns, surf.nodes.shape[0])), 8.0)
    assert not np.any(w) and norms.l2_weighted == 0.0


@pytest.mark.parametrize("t", [8.0, -8.0, 3.0])
def test_line_solve_against_symbol_division(t):
    ds = 2.0**-11
    lam = 30.0
    s = np.arange(-round(1.25 / ds), round(1.25 / ds) + 1) * ds
    win = lambda z: np.exp(-z**2 / 0.05) * np.exp(3j * z)
    sol = cgo.line_solve(win(s)[None], np.array([lam]), t, ds)
    n = 2**20
    ss = (np.arange(n) - n // 2) * ds
    xi = 2 * np.pi * np.fft.fftfreq(n, d=ds)
    W = np.fft.fftshift(np.fft.ifft(np.fft.fft(np.fft.ifftshift(win(ss))) / (xi**2 + 2j * t * xi - (t * t - lam))))
    ref = W[n // 2 - len(s) // 2:n // 2 + len(s) // 2 + 1]
    assert np.max(np.abs(sol.w[0] - ref)) < 1e-6 * np.max(np.abs(ref))


def test_weighted_norm_two_ways(setup48):
    surf, spec, grid, dist = setup48
    f = cgo.forcing(grid, dist, 0.3, 8.0, None)
    w, sol, _ = cgo.carleman_solve(grid, spec, f, 8.0)
    a = cgo.weighted_l2_nodal(w, spec.mass, grid.s_nodes, grid.ds)
    b = cgo.weighted_l2_modal_window(sol, grid.s_nodes, grid.ds)
    assert a == pytest.approx(b, rel=1e-12)


def test_resonant_tau(setup48):
    surf, spec, grid, _ = setup48
    f = np.ones((grid.ns, surf.nodes.shape[0]))
    with pytest.raises(ResonantTau):
        cgo.carleman_solve(grid, spec, f, float(np.sqrt(spec.eigenvalues[3])))
    tau, nudge = cgo.nudge_tau(float(np.sqrt(spec.eigenvalues[3])), spec.eigenvalues)
    assert np.min(np.abs(spec.eigenvalues - tau * tau)) >= cgo.RESONANCE_GAP and nudge != 0


def test_no_contraction_for_large_potential(setup48):
    surf, spec, grid, dist = setup48
    f = cgo.forcing(grid, dist, 0.0, 2.0, None)
    with pytest.raises(NoContraction):
        cgo.carleman_solve(grid, spec, f, 2.0, q=grid.evaluate(lambda s, x, y: 400.0 + 0 * s))


def test_contraction_factor_scales_like_inverse_tau(setup48):
    surf, spec, grid, dist = setup48
    qv = grid.evaluate(BUMP_Q)
    fac = {}
    for tau in (8.0, 16.0, 32.0):
        t, _ = cgo.nudge_tau(tau, spec.eigenvalues)
        f = cgo.forcing(grid, dist, 0.0, t, qv)
        fac[tau] = cgo.carleman_solve(grid, spec, f, t, qv)[2].contraction
    c0 = fac[8.0] * 8.0 / 0.5  # fitted at the smallest tau
    for tau in (16.0, 32.0):
        assert fac[tau] <= 0.5 * c0 / tau * 1.5


def test_phases_are_orthogonal(setup48):
    # phi = s depends only on the axis and psi only on the transversal point
    surf, spec, grid, dist = setup48
    cg = cgo.build_cgo(grid, spec, surf, OMEGA, 8.0, 0.0, None, 1, dist=dist, residual=False)
    assert cg.psi.shape == (surf.nodes.shape[0],) and cg.phi.shape == (grid.ns,)


@pytest.mark.parametrize("sign", [1, -1])
def test_assembled_equation_residual(setup48, sign):
    surf, spec, grid, dist = setup48
    beta = cgo.BetaBump(width=0.45 * np.pi)
    cg = cgo.build_cgo(grid, spec, surf, OMEGA, 16.0, 0.0, None, sign, beta=beta, mode="discrete", dist=dist)
    assert cg.residual_report["relative"] < 1e-2


def test_product_growth_cancels(setup48):
    surf, spec, grid, dist = setup48
    sel = grid.in_M_s[:, None] & grid.in_M_x[None, :]
    peaks = []
    for tau in (8.0, 16.0, 32.0):
        v1 = cgo.build_cgo(grid, spec, surf, OMEGA, tau, 0.0, BUMP_Q, -1, mode="discrete", dist=dist, residual=False)
        v2 = cgo.build_cgo(grid, spec, surf, OMEGA, v1.tau, 0.0, None, 1, mode="discrete", dist=dist,
                           residual=False)
        peaks.append(np.max(np.abs(v1.values() * v2.values())[sel]))
    assert max(peaks) / min(peaks) < 3.0
