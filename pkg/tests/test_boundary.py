import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from ibvplab import boundary as bd
from ibvplab.errors import DegenerateJacobian, MeshMismatch, NonPositiveFactor

EVERYWHERE = dict(s_max=10.0, radius=10.0)


@pytest.fixture(scope="module")
def box():
    return bd.DomainGrid("box", 1.0, 1.0, 17, 17)


@pytest.fixture(scope="module")
def cyl():
    return bd.DomainGrid("cylinder", 1.0, 0.6, 21, 21)


@pytest.fixture(scope="module")
def dn0(cyl):
    return bd.dn_map(cyl)


BUMP = "2*exp(-(x^2+y^2)/0.05-s^2/0.2)"


@pytest.fixture(scope="module")
def dnq(cyl):
    return bd.dn_map(cyl, bd.Potential.from_expression(BUMP))


def test_linear_trace_reproduced(box):
    u = bd.forward_solve(box, None, lambda s, x, y: x)
    assert np.max(np.abs(u - box.coords[:, 1])) < 1e-8
    u1 = bd.forward_solve(box, None, lambda s, x, y: np.ones_like(s))
    assert np.max(np.abs(u1 - 1)) < 1e-8


def test_normal_derivative_of_linear_function(box):
    u = box.coords[:, 1].copy()
    w, nu = bd.weak_normal_derivative(box, u)
    c = box.coords[box.boundary_nodes]
    face = np.isclose(c[:, 1], 1) & (np.abs(c[:, 0]) < 1 - 1e-9) & (np.abs(c[:, 2]) < 1 - 1e-9)
    assert np.max(np.abs(nu[face] - 1)) < 1e-3
    w1, _ = bd.weak_normal_derivative(box, np.ones(box.n_nodes))
    assert np.max(np.abs(w1)) < 1e-12


def test_discrete_separated_series():
    g = bd.DomainGrid("box", 1.0, 1.0, 33, 33)
    h = g.hs
    mu = (4 / h**2) * np.sin(np.pi * h / 2) ** 2
    kh = np.arccosh(1 + h * h * (2 * mu + 1) / 2) / h
    ex = lambda s, x, y: np.sin(np.pi * x) * np.sin(np.pi * y) * np.cosh(kh * s) / np.cosh(kh)
    u = bd.forward_solve(g, bd.Potential(lambda s, x, y: np.ones_like(s), **EVERYWHERE), ex)
    e = ex(*g.coords.T)
    assert np.max(np.abs(u - e)) < 1e-8 * np.max(np.abs(e))


def test_continuum_series_converges_second_order():
    k = np.sqrt(2 * np.pi**2 + 1)
    ex = lambda s, x, y: np.sin(np.pi * x) * np.sin(np.pi * y) * np.cosh(k * s) / np.cosh(k)
    q = bd.Potential(lambda s, x, y: np.ones_like(s), **EVERYWHERE)
    errs = []
    for n in (17, 33):
        g = bd.DomainGrid("box", 1.0, 1.0, n, n)
        errs.append(np.max(np.abs(bd.forward_solve(g, q, ex) - ex(*g.coords.T))))
    assert errs[0] / errs[1] >= 3.0


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_energy_identity(cyl, seed):
    r = np.random.default_rng(seed)
    B = cyl.boundary_nodes
    f = r.normal(size=len(B))
    q = bd.Potential.from_expression(BUMP)
    u = bd.forward_solve(cyl, q, f)
    w, _ = bd.weak_normal_derivative(cyl, u, q)
    energy = u @ (bd.system_matrix(cyl, q) @ u)
    assert w @ f == pytest.approx(energy, rel=1e-6)
    assert w @ f >= 0


def test_dn_constant_and_symmetry(cyl, dn0, dnq):
    one = np.ones(len(cyl.boundary_nodes))
    assert np.max(np.abs(dn0.apply(one))) < 1e-8 * np.max(np.abs(dn0.matrix))
    assert dn0.symmetry_error() < 1e-8
    assert dnq.symmetry_error() < 1e-8


def test_dn_matches_normal_derivative_of_solutions(cyl, dnq):
    q = bd.Potential.from_expression(BUMP)
    f = dnq.basis.modes[:, 5]
    w, _ = bd.weak_normal_derivative(cyl, bd.forward_solve(cyl, q, f), q)
    assert np.allclose(dnq.basis.modes.T @ w, dnq.matrix[:, 5], atol=1e-8 * np.abs(dnq.matrix).max())


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dn_monotone_in_potential(dn0, dnq, seed):
    f = dn0.basis.modes @ np.random.default_rng(seed).normal(size=dn0.basis.count)
    assert dnq.pairing(f, f) - dn0.pairing(f, f) >= -1e-8


def test_distance_axioms(cyl, dn0, dnq):
    assert bd.cauchy_dist(dn0, bd.dn_map(cyl)).epsilon == 0.0
    a = bd.cauchy_dist(dn0, dnq).epsilon
    assert a > 0 and a == bd.cauchy_dist(dnq, dn0).epsilon
    other = bd.dn_map(bd.DomainGrid("cylinder", 1.0, 0.6, 17, 17))
    with pytest.raises(MeshMismatch):
        bd.cauchy_dist(dn0, other)


def test_distance_linearisation(cyl, dn0):
    bump = bd.Potential.from_expression(BUMP)
    ratios = [bd.cauchy_dist(dn0, bd.dn_map(cyl, bump.scaled(t))).epsilon / t for t in (1e-1, 1e-2, 1e-3)]
    assert min(ratios) > 0
    assert abs(ratios[2] - ratios[1]) < 0.2 * abs(ratios[1] - ratios[0]) + 1e-9 * ratios[2]


def test_conformal_constant_factor(cyl):
    for c in ("1", "2.5"):
        q = bd.conformal_to_potential(cyl, bd.ConformalFactor.from_expression(c))
        assert np.max(np.abs(q)) < 1e-10


def test_conformal_potential_against_symbolic():
    s, x, y = sympy.symbols("s x y")
    w = 0.1 * (s * s + x * y - 0.5 * x) + 0.05 * s * x * y
    q_exact = sympy.lambdify((s, x, y), sympy.diff(w, s, 2) + sympy.diff(w, x, 2) + sympy.diff(w, y, 2)
                             + sympy.diff(w, s) ** 2 + sympy.diff(w, x) ** 2 + sympy.diff(w, y) ** 2)
    c = bd.ConformalFactor.from_expression(f"exp(4*({w}))".replace("**", "^"))
    errs = []
    for n in (17, 33):
        g = bd.DomainGrid("box", 1.0, 1.0, n, n)
        q = bd.conformal_to_potential(g, c)
        I = g.interior_nodes
        errs.append(np.max(np.abs(q[I] - q_exact(*g.coords[I].T))))
    assert errs[1] < 1e-2 and errs[0] / errs[1] > 3.0


def test_non_positive_factor_rejected(cyl):
    with pytest.raises(NonPositiveFactor):
        bd.conformal_to_potential(cyl, bd.ConformalFactor.from_expression("x"))


def test_conformal_schroedinger_equivalence(cyl):
    c = bd.ConformalFactor.from_expression("exp(4*0.1*exp(-(x^2+y^2+s^2)/0.1))")
    qc = bd.conformal_to_potential(cyl, c)
    u, v = bd.conformal_solution(cyl, c, lambda s, x, y: 1 + x + s * y)
    vq = bd.forward_solve(cyl, qc, v[cyl.boundary_nodes])
    assert np.max(np.abs(v - vq)) < 1e-4 * np.max(np.abs(vq))


def test_pushforward_identity_and_rotation():
    mesh = bd.kuhn_mesh(4)
    gamma = np.broadcast_to(np.eye(3) * 2.0, (len(mesh.tets), 3, 3)).copy()
    same = bd.pushforward_conductivity(gamma, mesh.nodes, mesh.nodes, mesh.tets)
    assert np.allclose(same, gamma)
    th = 0.4
    R = np.array([[np.cos(th), -np.sin(th), 0], [np.sin(th), np.cos(th), 0], [0, 0, 1]])
    rot = bd.pushforward_conductivity(gamma, mesh.nodes, mesh.nodes @ R.T, mesh.tets)
    assert np.allclose(rot, gamma)


def test_pushforward_degenerate_map():
    mesh = bd.kuhn_mesh(3)
    flat = mesh.nodes * np.array([1.0, 1.0, 0.0])
    with pytest.raises(DegenerateJacobian):
        bd.pushforward_conductivity(np.broadcast_to(np.eye(3), (len(mesh.tets), 3, 3)), mesh.nodes, flat, mesh.tets)


def test_gauge_invariance():
    gap, moved = bd.gauge_check(10)
    assert moved > 0.05
    assert gap < 10 * bd.SOLVER_RTOL
