import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ibvplab import geometry, xray


def chord_exit(x, d):
    # Euclidean backward exit time of x - t d from the unit disk
    b = x @ d
    return b + np.sqrt(b * b - (x @ x - 1.0))


def smooth_h(seed):
    r = np.random.default_rng(seed)
    a = r.normal(size=6) * [1, 0.3, 0.3, 0.2, 0.2, 0.1]
    return lambda p, al: (1 + a[0] ** 2 + a[1] * np.cos(p) + a[2] * np.sin(p) + a[3] * np.cos(al)
                          + a[4] * np.sin(al) + a[5] * np.cos(2 * p) * np.cos(al))


def test_diameter_values(disk64):
    fan = geometry.build_fan(disk64, 2, 5, 0.05)  # the middle direction is the inward normal
    one = xray.xray_apply(disk64, lambda x, y: np.ones_like(x), 0.0, fan).values
    assert one[0, 2] == pytest.approx(2.0, abs=1e-9)
    att = xray.xray_apply(disk64, lambda x, y: np.ones_like(x), 1.0, fan).values
    assert att[0, 2] == pytest.approx(1 - np.exp(-2.0), abs=1e-7)


def test_odd_integrand_on_diameter(disk64):
    fan = geometry.build_fan(disk64, 2, 5, 0.05)
    v = xray.xray_apply(disk64, lambda x, y: x * np.cos(fan.phi[0]) + y * np.sin(fan.phi[0]), 0.0, fan).values
    assert abs(v[0, 2]) < 1e-9


@pytest.mark.parametrize("sigma", [0.0, 0.3, 1.0])
def test_closed_forms_on_random_rays(disk64, fan64, rng, sigma):
    pick = rng.choice(fan64.weights.size, 50, replace=False)
    L = 2 * np.cos(fan64.alpha[pick % fan64.shape[1]])
    v = xray.xray_apply(disk64, lambda x, y: np.ones_like(x), sigma, fan64).values.ravel()[pick]
    exact = L if sigma == 0 else (1 - np.exp(-sigma * L)) / sigma
    assert np.max(np.abs(v - exact) / exact) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 1.5))
def test_linearity(disk64, fan64, a, b, sigma):
    f = lambda x, y: np.exp(-(x * x + y * y) / 0.2)
    g = lambda x, y: x * y + 0.3
    lhs = xray.xray_apply(disk64, lambda x, y: a * f(x, y) + b * g(x, y), sigma, fan64).values
    rhs = a * xray.xray_apply(disk64, f, sigma, fan64).values + b * xray.xray_apply(disk64, g, sigma, fan64).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * (1 + np.max(np.abs(rhs)))


def test_attenuation_monotone(disk64, fan64):
    f = lambda x, y: np.exp(-((x - 0.2) ** 2 + y * y) / 0.1)
    vals = [xray.xray_apply(disk64, f, s, fan64).values for s in (0.0, 0.4, 1.2)]
    assert np.all(vals[1] <= vals[0]) and np.all(vals[2] <= vals[1])


def test_adjoint_of_constant_at_centre(disk64, fan64):
    full = lambda p, a: np.ones_like(p)
    # the fan cut-off removes |alpha| > alpha_max; at the centre every entry is normal (alpha = 0)
    assert xray.xray_adjoint(disk64, full, 0.0, fan64, points=[[0.0, 0.0]])[0] == pytest.approx(2 * np.pi, rel=1e-9)
    assert xray.xray_adjoint(disk64, full, 0.3, fan64, points=[[0.0, 0.0]])[0] == pytest.approx(
        2 * np.pi * np.exp(-0.3), rel=1e-9)


def test_adjoint_against_dense_directions(disk64, fan64):
    h = smooth_h(3)
    pts = np.array([[0.1, -0.2], [-0.35, 0.3], [0.5, 0.1]])
    sigma = 0.3
    got = xray.xray_adjoint(disk64, h, sigma, fan64, points=pts)
    nb = 10000
    beta = 2 * np.pi * np.arange(nb) / nb
    d = np.stack([np.cos(beta), np.sin(beta)], -1)
    ref = []
    for x in pts:
        T = np.array([chord_exit(x, di) for di in d])
        entry = x - T[:, None] * d
        phi, alpha = geometry.fan_coordinates(disk64, entry, d)
        vals = h(phi, alpha) * (np.abs(alpha) <= fan64.alpha_max)
        ref.append(np.mean(np.exp(-sigma * T) * vals) * 2 * np.pi)
    assert np.allclose(got, ref, rtol=1e-3)


def test_adjoint_identity_zero_function(disk64, fan64):
    assert xray.adjoint_identity_check(disk64, lambda x, y: 0 * x, smooth_h(0), 0.3, fan64) == 0.0


@pytest.mark.parametrize("sigma", [0.0, 0.3])
def test_adjoint_identity_gaussian(disk64, fan64, sigma):
    f = lambda x, y: np.exp(-(x * x + y * y) / (2 * 0.15**2))
    assert xray.adjoint_identity_check(disk64, f, lambda p, a: np.ones_like(p), sigma, fan64) < 1e-3


@pytest.fixture(scope="module")
def small():
    s = geometry.SimpleSurface.euclidean(24)
    fan = geometry.build_fan(s, 64, 64, 0.05)
    n = s.grid_resolution
    block = np.arange(6, 18)
    support = (block[:, None] * n + block[None, :]).ravel()  # 12 x 12 interior nodes
    return s, fan, support, xray.normal_matrix(s, 0.0, support, fan)


def test_normal_matrix_symmetric_psd_full_rank(small):
    _, _, support, nm = small
    N = nm.entries
    assert len(support) == 144
    assert np.max(np.abs(N - N.T)) <= 1e-6 * np.max(np.abs(N))
    ev = np.linalg.eigvalsh(0.5 * (N + N.T))
    assert ev.min() >= -1e-8 * ev.max()
    assert not nm.rank_deficient


def test_normal_operator_against_euclidean_kernel(disk64):
    s = geometry.SimpleSurface.euclidean(24)
    fan = geometry.build_fan(s, 64, 64, 0.05)
    nm = xray.normal_matrix(s, 0.0, xray.support_nodes(s), fan)
    f = lambda x, y: np.clip(1 - (x * x + y * y) / 0.25, 0, None) ** 3
    fv = f(nm.coords[:, 0], nm.coords[:, 1])
    ref = xray.euclidean_normal_kernel(f, nm.coords)
    inner = np.hypot(*nm.coords.T) < 0.5
    assert np.max(np.abs(nm.entries @ fv - ref)[inner]) <= 0.05 * np.max(np.abs(ref))


def test_noiseless_inversion_and_zero_data(small, rng):
    _, _, _, nm = small
    f = rng.normal(size=nm.entries.shape[1])
    rec = xray.normal_invert(nm, nm.apply(f))
    assert np.linalg.norm(rec - f) <= 1e-6 * np.linalg.norm(f)
    assert not np.any(xray.normal_invert(nm, np.zeros(len(f))))
    with pytest.raises(ValueError):
        xray.normal_invert(nm, f, reg=-1.0)


def test_noisy_inversion_regularisation_curve(small):
    _, _, _, nm = small
    c = nm.coords
    f = np.exp(-(c[:, 0] ** 2 + c[:, 1] ** 2) / 0.1)
    data = nm.apply(f)
    noise = np.random.default_rng(7).normal(size=len(f))
    data = data + 1e-3 * np.linalg.norm(data) * noise / np.linalg.norm(noise)
    regs = 10.0 ** np.arange(-12, 1)
    err = np.array([np.linalg.norm(xray.normal_invert(nm, data, r) - f) for r in regs])
    e0 = np.linalg.norm(xray.normal_invert(nm, data) - f)
    k = int(np.argmin(err))
    assert 0 < k < len(regs) - 1
    assert err[k] < e0


def test_injectivity_profile_lipschitz(small):
    s, fan, support, _ = small
    sig = np.arange(0.0, 1.0001, 0.25)
    d = 0.01
    for a in sig:
        n0 = xray.normal_matrix(s, a, support, fan)
        n1 = xray.normal_matrix(s, a + d, support, fan)
        assert n0.smallest_singular_value > 0
        # Weyl: singular values move by at most the spectral norm of the perturbation
        gap = abs(n1.smallest_singular_value - n0.smallest_singular_value)
        assert gap <= np.linalg.norm(n1.entries - n0.entries, 2) * (1 + 1e-9)
        assert gap <= 1.0 * d * n0.singular_values[0]


@pytest.mark.xfail(strict=True, reason="attenuation breaks the reversal symmetry of the discrete profile")
def test_injectivity_profile_even(small):
    s, fan, support, _ = small
    (a, sa), (b, sb) = xray.injectivity_profile(s, [-0.5, 0.5], support, fan)
    assert sa == pytest.approx(sb, rel=1e-2)


def test_stability_constant_growth():
    rows = []
    for n in (16, 24, 32):
        s = geometry.SimpleSurface.euclidean(n)
        fan = geometry.build_fan(s, 4 * n, 4 * n, 0.05)  # the fan is refined with the grid
        sup = xray.support_nodes(s)
        nm = xray.normal_matrix(s, 0.0, sup, fan)
        rows.append((len(sup), 1.0 / nm.smallest_singular_value))
    (n0, c0), *rest = rows
    for n, c in rest:
        assert c / c0 <= 2.0 * n / n0
