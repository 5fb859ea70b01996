import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ibvplab import geometry
from ibvplab.errors import BadResolution, NonSimple


def test_diameter_chord_exit(disk64):
    p = geometry.trace_geodesic(disk64, [1.0, 0.0], [-1.0, 0.0], 1e-3)
    assert p.exit_time == pytest.approx(2.0, abs=1e-6)
    assert np.allclose(p.positions[-1], [-1.0, 0.0], atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(-1.4, 1.4))
def test_chord_exit_time_depends_only_on_alpha(disk32, phi, alpha):
    d = disk32.inward_direction(phi, alpha)
    p = geometry.trace_geodesic(disk32, disk32.boundary_point(phi), d, 1e-2)
    assert p.exit_time == pytest.approx(2 * np.cos(alpha), abs=1e-6)


def test_unit_speed_conserved(disk64):
    d = disk64.inward_direction(0.3, 0.7)
    p = geometry.trace_geodesic(disk64, disk64.boundary_point(0.3), d, 1e-3)
    assert p.speed_error(disk64) <= 1e-6


def test_curved_exit_time_against_fine_integration(bumpy32):
    start = [1.0, 0.0]
    d = bumpy32.inward_direction(0.0, 0.0)
    fine = geometry.trace_geodesic(bumpy32, start, d, 1e-4).exit_time
    finer = geometry.trace_geodesic(bumpy32, start, d, 5e-5).exit_time
    oracle = finer + (finer - fine) / 15.0  # Richardson for a 4th-order scheme
    coarse = geometry.trace_geodesic(bumpy32, start, d, 1e-2).exit_time
    assert abs(coarse - oracle) < 1e-6
    # along the diameter the speed is exp(-lam), so the exit time is the integral of exp(lam)
    x = np.linspace(-1, 1, 20001)
    assert oracle == pytest.approx(np.trapezoid(np.exp(0.1 * (1 - x * x)), x), abs=1e-7)


def test_non_unit_direction_rejected(disk32):
    with pytest.raises(ValueError):
        geometry.trace_geodesic(disk32, [1.0, 0.0], [-2.0, 0.0])


def test_non_simple_surface_rejected():
    with pytest.raises(NonSimple):
        geometry.SimpleSurface.from_expression("2.5*exp(-(x^2+y^2)/0.1)", 32)


def test_euclidean_distance_field(disk32):
    om = np.array([1.0, 0.0])
    df = geometry.boundary_distance_field(disk32, om)
    assert np.allclose(df.psi, np.linalg.norm(disk32.nodes - om, axis=1), atol=1e-9)
    assert np.all(df.psi >= 0)


def test_distance_field_matches_geodesic_length(bumpy32):
    om = np.array([-1.0, 0.0])
    df = geometry.boundary_distance_field(bumpy32, om)
    # re-shoot each sampled node from its chart angle and compare positions
    idx = np.arange(0, len(df.psi), 37)
    dirs = geometry.chart_direction(bumpy32, om, df.theta[idx])
    end, _, _ = geometry.shoot(bumpy32, np.broadcast_to(om, (len(idx), 2)), dirs, df.psi[idx], 400)
    assert np.max(np.linalg.norm(end - bumpy32.nodes[idx], axis=1)) < 10 * bumpy32.h


def test_eikonal_residual_halves_under_refinement():
    om = np.array([1.0, 0.0])
    res = []
    for n in (32, 64):
        s = geometry.SimpleSurface.from_expression("0.1*(1-x^2-y^2)", n)
        res.append(geometry.eikonal_residual(s, geometry.boundary_distance_field(s, om).psi, om, exclude=0.25))
    assert res[1] <= 0.5 * res[0]


def test_polar_chart_euclidean(disk32):
    ch = geometry.polar_chart(disk32, [1.0, 0.0], 40, 16)
    ok = ch.valid
    rho = np.broadcast_to(ch.rho_grid[:, None], ok.shape)
    assert np.allclose(ch.jacobian_sqrt[ok], np.sqrt(rho[ok]), rtol=1e-6)
    d = np.linalg.norm(ch.positions - np.array([1.0, 0.0]), axis=-1)
    assert np.allclose(d[ok], rho[ok], atol=1e-9)


def test_polar_chart_matches_traced_geodesics(bumpy32):
    om = np.array([0.0, 1.0])
    ch = geometry.polar_chart(bumpy32, om, 20, 8)
    j = 3
    d = geometry.chart_direction(bumpy32, om, ch.theta_grid[j])
    p = geometry.trace_geodesic(bumpy32, om, d, 1e-3)
    for k in (4, 9):
        if not ch.valid[k, j]:
            continue
        x = np.interp(ch.rho_grid[k], p.t, p.positions[:, 0])
        y = np.interp(ch.rho_grid[k], p.t, p.positions[:, 1])
        assert np.hypot(x - ch.positions[k, j, 0], y - ch.positions[k, j, 1]) < 1e-5


def test_fan_measure(disk64):
    fan = geometry.build_fan(disk64, 64, 64, 0.05)
    assert np.all((fan.santalo > 0.05) & (fan.santalo <= 1))
    amax = fan.alpha_max
    exact = 2 * np.pi * 2 * np.sin(amax)
    assert fan.total_measure() == pytest.approx(exact, rel=1e-2)
    fine = geometry.build_fan(disk64, 8, 2000, 1e-4)
    assert fine.total_measure() == pytest.approx(4 * np.pi, rel=1e-3)


def test_fan_rejects_coarse_direction_grid(disk32):
    with pytest.raises(BadResolution):
        geometry.build_fan(disk32, 8, 3)
