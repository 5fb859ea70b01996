"""Complex geometrical optics solutions on the cylinder R x M0.

``u = exp(-t (s + i psi)) (a + r)`` with ``t = sign * tau``. The remainder is
obtained from ``w = exp(-i t psi) r``, which solves the conjugated equation

    -(d_s - t)^2 w - Laplacian_0 w + q w = f,   f = chi exp(-i t psi) (Laplacian_g - q) a

mode by mode in the transversal Dirichlet eigenbasis. Each mode is solved
with the exact Green's function of the line (roots ``t +- sqrt(lambda_k)``),
applied through recursive exponential filters to the piecewise-linear
interpolant of ``f`` along ``s``.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import sympy

from . import geometry, spectral
from .errors import ChartMaskViolation, NoContraction, ResonantTau

DELTA = 1.0
RESONANCE_GAP = 0.5
SYMBOL_FLOOR = 1e-8
FP_TOL = 1e-10


# ---------------------------------------------------------------------------
# amplitude pieces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BetaBump:
    """``exp(-1 / (1 - ((theta - center) / width)^2))`` on ``|theta - center| < width``."""

    center: float = np.pi / 2
    width: float = np.pi / 4

    def __call__(self, theta):
        u = (np.asarray(theta, float) - self.center) / self.width
        out = np.zeros_like(u)
        m = np.abs(u) < 1
        out[m] = np.exp(-1.0 / (1.0 - u[m] ** 2))
        return out

    @property
    def support(self):
        return self.center - self.width, self.center + self.width


def alpha(s, rho, sigma):
    """``exp(-sigma (rho - i s))``, holomorphic in ``s + i rho``."""
    return np.exp(-sigma * (np.asarray(rho) - 1j * np.asarray(s)))


def _smoothstep_functions():
    x = sympy.Symbol("x")
    a = sympy.exp(-1 / x)
    b = sympy.exp(-1 / (1 - x))
    step = b / (a + b)  # 1 at x=0, 0 at x=1
    return [sympy.lambdify(x, sympy.diff(step, x, k), "numpy") for k in range(3)]


_STEP = _smoothstep_functions()


def smooth_cutoff(u, inner, outer, order=0):
    """C-infinity function of ``u >= 0``: 1 for ``u <= inner``, 0 for ``u >= outer``.

    ``order`` 1 or 2 returns the derivative in ``u``.
    """
    u = np.asarray(u, float)
    L = outer - inner
    x = (u - inner) / L
    out = np.zeros_like(x)
    if order == 0:
        out[x <= 0] = 1.0
    m = (x > 0) & (x < 1)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        val = np.nan_to_num(_STEP[order](x[m]))
    out[m] = val / L**order
    return out


@dataclass(frozen=True)
class Amplitudes:
    """Chart-grid amplitudes ``a1 = |g|^-1/4 alpha beta`` and ``a2 = |g|^-1/4``."""

    s: np.ndarray
    chart: object
    a1: np.ndarray  # (ns, nrho, ntheta)
    a2: np.ndarray


def amplitude(chart, sigma, s=(0.0,), beta=BetaBump()):
    """Amplitudes on the polar chart grid for each axial coordinate in ``s``."""
    lo, hi = beta.support
    if lo <= 0 or hi >= np.pi:
        raise ChartMaskViolation("beta support must lie inside (0, pi)")
    th = chart.theta_grid
    inside = (th > lo) & (th < hi)
    js = chart.jacobian_sqrt[:, inside]
    if np.any(chart.valid[:, inside] & ~(js > 0)):
        raise ChartMaskViolation("beta support meets chart nodes with a degenerate Jacobian")
    s = np.asarray(s, float)
    rho = chart.rho_grid[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        g14 = np.where(chart.valid, 1.0 / chart.jacobian_sqrt, np.nan)
    al = alpha(s[:, None, None], rho[None], sigma)
    a1 = g14[None] * al * beta(th)[None, None, :]
    a2 = np.broadcast_to(g14[None], a1.shape).astype(complex)
    return Amplitudes(s, chart, a1, a2)


def transport_factor_residual(sigma, beta=BetaBump(), n=41, h=1e-3):
    """max |(d_s + i d_rho)(alpha beta)| by 6th-order central differences.

    ``|g|^(1/4) a = alpha(s, rho) beta(theta)``, so the residual checks the
    Cauchy-Riemann property of the axial-radial factor numerically.
    """
    s = np.linspace(-1, 1, n)[:, None, None]
    rho = np.linspace(0.05, 2.0, n)[None, :, None]
    th = np.linspace(0.05, np.pi - 0.05, n)[None, None, :]
    c = np.array([-1, 9, -45, 0, 45, -9, 1]) / 60.0
    off = np.arange(-3, 4)
    ds = sum(ci * alpha(s + k * h, rho, sigma) for ci, k in zip(c, off)) / h
    dr = sum(ci * alpha(s, rho + k * h, sigma) for ci, k in zip(c, off)) / h
    return float(np.max(np.abs((ds + 1j * dr) * beta(th))))


def eikonal_check(surface, omega, field_=None):
    """``(max | |d psi|_g0^2 - 1 |, max |d_s psi|)`` away from ``omega``.

    The second entry is identically zero: psi does not depend on ``s``.
    """
    df = field_ if field_ is not None else geometry.boundary_distance_field(surface, omega)
    return geometry.eikonal_residual(surface, df.psi, omega), 0.0


# ---------------------------------------------------------------------------
# cylinder grid
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class CylinderGrid:
    """Axial samples over the transversal grid, with the forcing cutoffs.

    ``M = [-S, S] x {|x| < radius}``. The forcing cutoff equals 1 on M (plus a
    two-node margin) and vanishes for ``|s| >= S + pad`` or ``|x| >= cut_radius``.
    """

    surface: object
    S: float = 1.0
    pad: float = 0.25
    ds: float = 1.0 / 64
    radius: float = 0.6
    cut_radius: float = 0.75

    @cached_property
    def s_nodes(self):
        n = int(round((self.S + self.pad) / self.ds))
        return self.ds * np.arange(-n, n + 1)

    @property
    def ns(self):
        return len(self.s_nodes)

    @cached_property
    def r_nodes(self):
        return np.hypot(self.surface.nodes[:, 0], self.surface.nodes[:, 1])

    @cached_property
    def chi_x(self):
        inner = self.radius + 2 * self.surface.h
        return smooth_cutoff(self.r_nodes, inner, self.cut_radius)

    def chi_s(self, order=0):
        return smooth_cutoff(np.abs(self.s_nodes), self.S + 2 * self.ds, self.S + self.pad, order) * (
            np.sign(self.s_nodes) ** order)

    @cached_property
    def in_M_x(self):
        return self.r_nodes < self.radius

    @cached_property
    def in_M_s(self):
        return np.abs(self.s_nodes) <= self.S + 1e-12

    @cached_property
    def stiffness(self):
        return spectral.dirichlet_stiffness(self.surface)

    def laplacian0(self, X):
        """5-point ``Laplacian_g0`` applied to nodal data ``(..., N)``."""
        X = np.asarray(X)
        flat = X.reshape(-1, X.shape[-1])
        out = -(self.stiffness @ flat.T).T / self.surface.volume_weights
        return out.reshape(X.shape)

    def evaluate(self, q):
        """Potential samples ``(ns, N)`` from a callable ``q(s, x, y)`` or an array."""
        if q is None:
            return None
        if callable(q):
            S, X = np.meshgrid(self.s_nodes, self.surface.nodes[:, 0], indexing="ij")
            _, Y = np.meshgrid(self.s_nodes, self.surface.nodes[:, 1], indexing="ij")
            return np.asarray(q(S, X, Y), float)
        q = np.asarray(q, float)
        if q.shape != (self.ns, self.surface.nodes.shape[0]):
            raise ValueError("potential array must have shape (ns, N)")
        return q

    def s_weights(self):
        w = np.full(self.ns, self.ds)
        w[0] = w[-1] = 0.5 * self.ds
        return w


# ---------------------------------------------------------------------------
# line solver
# ---------------------------------------------------------------------------

def _phi12(z):
    """``int_0^1 e^{zv} dv`` and ``int_0^1 v e^{zv} dv`` with a series for small z."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    ez = np.exp(zs)
    p1 = np.where(small, 1 + z / 2 + z**2 / 6 + z**3 / 24, (ez - 1) / zs)
    p2 = np.where(small, 0.5 + z / 3 + z**2 / 8 + z**3 / 30, (ez * (zs - 1) + 1) / zs**2)
    return p1, p2


def _forward_filter(F, r, ds):
    """``P(s_j) = int_{-inf}^{s_j} e^{r (s_j - s')} f(s') ds'`` for ``r <= 0``."""
    K, ns = F.shape
    z = r * ds
    p1, p2 = _phi12(z)
    e = np.exp(z)
    c0 = ds * p2  # weight of f_j
    c1 = ds * (p1 - p2)  # weight of f_{j+1}
    P = np.zeros_like(F)
    for j in range(ns - 1):
        P[:, j + 1] = e * P[:, j] + c0 * F[:, j] + c1 * F[:, j + 1]
    return P


def _backward_filter(F, r, ds):
    """``Q(s_j) = int_{s_j}^{inf} e^{r (s_j - s')} f(s') ds'`` for ``r >= 0``."""
    K, ns = F.shape
    z = -r * ds
    p1, p2 = _phi12(z)
    e = np.exp(z)
    c0 = ds * (p1 - p2)
    c1 = ds * p2
    Q = np.zeros_like(F)
    for j in range(ns - 2, -1, -1):
        Q[:, j] = e * Q[:, j + 1] + c0 * F[:, j] + c1 * F[:, j + 1]
    return Q


@dataclass
class LineSolution:
    """Modal solution on the window plus exponential tails outside it.

    Tails are lists of ``(coefficient (K,), rate (K,))``: beyond the right end
    ``w_k(s) = sum c exp(rate (s - s_end))``, before the left end likewise
    with ``s - s_start``.
    """

    w: np.ndarray  # (K, ns)
    dw: np.ndarray
    right: list
    left: list


def line_solve(F, lam, t, ds):
    """Solve ``-(d_s - t)^2 w + lam_k w = f_k`` on the line for every mode.

    ``F`` holds ``f_k`` at uniform nodes (zero outside the window); the
    unique solution with at most polynomial growth is returned with its
    exact ``s``-derivative.
    """
    F = np.asarray(F, dtype=complex)
    lam = np.asarray(lam, float)
    kap = np.sqrt(lam)
    r1 = t + kap
    r2 = t - kap
    K, ns = F.shape
    two = kap > abs(t)
    fwd = t < -kap
    bwd = t > kap
    w = np.zeros_like(F)
    dw = np.zeros_like(F)
    zero = np.zeros(K, complex)
    right_c = [zero.copy(), zero.copy()]
    left_c = [zero.copy(), zero.copy()]
    inv = 1.0 / (2 * kap)
    for mask, kind in ((two, "two"), (bwd, "bwd"), (fwd, "fwd")):
        if not mask.any():
            continue
        Fm = F[mask]
        b1, b2 = r1[mask], r2[mask]
        a1, a2 = b1[:, None], b2[:, None]
        iv = inv[mask][:, None]
        if kind == "two":
            P = _forward_filter(Fm, b2, ds)
            Q = _backward_filter(Fm, b1, ds)
            w[mask] = (P + Q) * iv
            dw[mask] = (a2 * P + a1 * Q) * iv
            right_c[0][mask] = P[:, -1] * iv[:, 0]
            left_c[0][mask] = Q[:, 0] * iv[:, 0]
        elif kind == "bwd":
            Q1 = _backward_filter(Fm, b1, ds)
            Q2 = _backward_filter(Fm, b2, ds)
            w[mask] = (Q1 - Q2) * iv
            dw[mask] = (a1 * Q1 - a2 * Q2) * iv
            left_c[0][mask] = Q1[:, 0] * iv[:, 0]
            left_c[1][mask] = -Q2[:, 0] * iv[:, 0]
        else:
            P2 = _forward_filter(Fm, b2, ds)
            P1 = _forward_filter(Fm, b1, ds)
            w[mask] = (P2 - P1) * iv
            dw[mask] = (a2 * P2 - a1 * P1) * iv
            right_c[0][mask] = P2[:, -1] * iv[:, 0]
            right_c[1][mask] = -P1[:, -1] * iv[:, 0]
    right = [(right_c[0], r2), (right_c[1], r1)]
    left = [(left_c[0], r1), (left_c[1], r2)]
    return LineSolution(w, dw, right, left)


def symbol_min(lam, t):
    """``min_xi |xi^2 + 2 i t xi - (t^2 - lam_k)|`` over modes (attained at xi = 0)."""
    return float(np.min(np.abs(np.asarray(lam) - t * t)))


def nudge_tau(tau, eigenvalues, gap=RESONANCE_GAP, step=1e-3):
    """Smallest move of ``tau`` giving ``min_k |tau^2 - lambda_k| >= gap``."""
    lam = np.asarray(eigenvalues)
    for k in range(100000):
        for cand in (tau + k * step, tau - k * step):
            if cand > 0 and np.min(np.abs(lam - cand * cand)) >= gap:
                return cand, cand - tau
    raise ResonantTau(f"no admissible tau near {tau}")


# ---------------------------------------------------------------------------
# weighted norms
# ---------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(400)
_GL_X = 0.5 * (_GL_X + 1)
_GL_W = 0.5 * _GL_W


def _tail_integral(terms, s0, direction, delta, mode_weight=None, derivative=False):
    """``sum_k m_k int (1 + s^2)^-delta |sum_i c_i e^{r_i u}|^2 ds`` over one half line.

    ``u = s - s0`` runs over ``[0, inf)`` (direction=+1) or ``(-inf, 0]``
    (direction=-1). With ``derivative`` the integrand is the s-derivative.
    """
    u = _GL_X / (1 - _GL_X)
    jac = 1 / (1 - _GL_X) ** 2
    rho = (1 + (s0 + direction * u) ** 2) ** (-delta)
    acc = 0.0
    for c, r in terms:
        live = c != 0
        arg = np.where(live[:, None], np.outer(r, direction * u), -np.inf)
        ex = c[:, None] * np.exp(arg)
        acc = acc + (ex * r[:, None] if derivative else ex)
    mk = 1.0 if mode_weight is None else mode_weight[:, None]
    return float(np.sum(mk * np.abs(acc) ** 2 * (rho * jac * _GL_W)[None]))


@dataclass(frozen=True)
class CarlemanNorms:
    l2_weighted: float
    h1_weighted: float
    iterations: int
    contraction: float


def _simpson_s(ns, ds):
    w = np.ones(ns)
    if ns % 2 == 1 and ns >= 3:
        w[1:-1:2] = 4
        w[2:-1:2] = 2
        return w * ds / 3
    w[0] = w[-1] = 0.5
    return w * ds


def weighted_norms_modal(sol, lam, s_nodes, ds, delta=DELTA):
    """``(||w||_{L2_-delta}, ||w||_{H1_-delta})`` from the modal solution, tails included."""
    rho = (1 + s_nodes**2) ** (-delta)
    q = _simpson_s(len(s_nodes), ds) * rho
    l2 = float(np.sum(q * np.sum(np.abs(sol.w) ** 2, axis=0)))
    h1 = l2 + float(np.sum(q * np.sum(lam[:, None] * np.abs(sol.w) ** 2 + np.abs(sol.dw) ** 2, axis=0)))
    right = [(c, r) for c, r in sol.right]
    left = [(c, r) for c, r in sol.left]
    tl2 = th1 = 0.0
    for terms, s0, d in ((right, s_nodes[-1], 1), (left, s_nodes[0], -1)):
        tl2 += _tail_integral(terms, s0, d, delta)
        th1 += _tail_integral(terms, s0, d, delta, 1 + lam) + _tail_integral(terms, s0, d, delta, derivative=True)
    return np.sqrt(l2 + tl2), np.sqrt(h1 + th1)


def weighted_l2_nodal(w_nodal, mass, s_nodes, ds, delta=DELTA):
    """Window part of ``||(1 + s^2)^(-delta/2) w||_{L2}`` from nodal values."""
    rho = (1 + s_nodes**2) ** (-delta)
    q = _simpson_s(len(s_nodes), ds) * rho
    return float(np.sqrt(np.sum(q[:, None] * mass[None, :] * np.abs(w_nodal) ** 2)))


def weighted_l2_modal_window(sol, s_nodes, ds, delta=DELTA):
    rho = (1 + s_nodes**2) ** (-delta)
    q = _simpson_s(len(s_nodes), ds) * rho
    return float(np.sqrt(np.sum(q * np.sum(np.abs(sol.w) ** 2, axis=0))))


# ---------------------------------------------------------------------------
# Carleman solve
# ---------------------------------------------------------------------------

def carleman_solve(grid, spectrum, f, tau, q=None, delta=DELTA, tol=FP_TOL, max_iter=200):
    """Solve ``exp(t s)(-Laplacian + q) exp(-t s) w = f`` on R x M0.

    ``tau`` is the signed exponent ``t``. ``f`` has shape ``(ns, N)``.
    Returns ``(w nodal, LineSolution, CarlemanNorms)``.
    """
    if delta <= 0.5:
        raise ValueError("delta must exceed 1/2")
    lam = spectrum.eigenvalues
    if symbol_min(lam, tau) < SYMBOL_FLOOR:
        raise ResonantTau(f"tau^2 = {tau * tau} is within {SYMBOL_FLOOR} of a Dirichlet eigenvalue")
    f = np.asarray(f, complex)
    ds = grid.ds
    F = spectrum.coefficients(f.T)  # (K, ns)
    if not np.any(F):
        sol = LineSolution(np.zeros_like(F), np.zeros_like(F), [(np.zeros(len(lam), complex), lam * 0)] * 2,
                           [(np.zeros(len(lam), complex), lam * 0)] * 2)
        return np.zeros_like(f), sol, CarlemanNorms(0.0, 0.0, 0, 0.0)
    sol = line_solve(F, lam, tau, ds)
    its = 0
    factor = 0.0
    if q is not None and np.any(q):
        prev_upd = None
        for its in range(1, max_iter + 1):
            wn = spectrum.synthesize(sol.w).T  # (ns, N)
            G = F - spectrum.coefficients((q * wn).T)
            new = line_solve(G, lam, tau, ds)
            upd = np.linalg.norm(new.w - sol.w)
            base = np.linalg.norm(new.w)
            sol = new
            if prev_upd is not None and prev_upd > 0:
                factor = upd / prev_upd
                if factor >= 1.0 and its > 3:
                    raise NoContraction(f"fixed-point factor {factor:.3f} >= 1 at t={tau}")
            prev_upd = upd
            if upd <= tol * max(base, 1e-300):
                break
        else:
            raise NoContraction(f"no convergence after {max_iter} iterations")
    w_nodal = spectrum.synthesize(sol.w).T
    l2, h1 = weighted_norms_modal(sol, lam, grid.s_nodes, ds, delta)
    return w_nodal, sol, CarlemanNorms(l2, h1, its, factor)


# ---------------------------------------------------------------------------
# CGO assembly
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class CgoSolution:
    tau: float
    sigma: float
    omega: np.ndarray
    sign: int
    amplitude: np.ndarray  # (ns, N) a on the cylinder grid (uncut)
    remainder: np.ndarray  # (ns, N) r = exp(i t psi) w
    psi: np.ndarray  # (N,)
    phi: np.ndarray  # (ns,) = s
    grid: object = field(repr=False)
    w: np.ndarray = field(repr=False, default=None)
    dw: np.ndarray = field(repr=False, default=None)
    forcing_norm: float = 0.0
    norms: CarlemanNorms = None
    residual_report: dict = field(default_factory=dict)
    tau_nudge: float = 0.0

    @property
    def t(self):
        return self.sign * self.tau

    def values(self):
        """``u`` on the cylinder grid, ``(ns, N)``."""
        e = np.exp(-self.t * (self.phi[:, None] + 1j * self.psi[None, :]))
        return e * (self.amplitude + self.remainder)

    def conjugated(self):
        """``W = exp(t s) u = exp(-i t psi) a + w``."""
        return np.exp(-1j * self.t * self.psi)[None, :] * self.amplitude + self.w


def polar_nodes(surface, omega):
    return geometry.boundary_distance_field(surface, omega)


def amplitude_nodes(grid, dist, sigma, beta, kind="a1"):
    """Amplitude on the cylinder nodes (zero where the Jacobi scalar vanishes)."""
    J = dist.jacobi
    with np.errstate(divide="ignore"):
        g14 = np.where(J > 1e-12, 1.0 / np.sqrt(np.maximum(J, 1e-300)), 0.0)
    s = grid.s_nodes[:, None]
    if kind == "a2":
        return np.broadcast_to(g14[None, :], (grid.ns, len(J))).astype(complex)
    return g14[None, :] * beta(dist.theta)[None, :] * alpha(s, dist.psi[None, :], sigma)


def _axial_derivatives(grid, sigma, kind):
    """``h, h', h''`` for the axial factor ``chi_s(s) e^{i sigma s}`` (or ``chi_s``)."""
    c0, c1, c2 = grid.chi_s(0), grid.chi_s(1), grid.chi_s(2)
    if kind == "a2":
        return c0 + 0j, c1 + 0j, c2 + 0j
    e = np.exp(1j * sigma * grid.s_nodes)
    return c0 * e, (c1 + 1j * sigma * c0) * e, (c2 + 2j * sigma * c1 - sigma**2 * c0) * e


def forcing(grid, dist, sigma, t, q, beta=BetaBump(), kind="a1", mode="analytic"):
    """Right-hand side of the conjugated equation.

    ``analytic``: ``chi exp(-i t psi) (Laplacian_g - q) a`` with the
    transversal Laplacian of the smooth amplitude by finite differences.
    ``discrete``: ``-chi exp(t s) L_h(exp(-t Phi) a)``, consistent with the
    5-point operator so the assembled solution solves the discrete equation.
    """
    J = dist.jacobi
    with np.errstate(divide="ignore"):
        g14 = np.where(J > 1e-12, 1.0 / np.sqrt(np.maximum(J, 1e-300)), 0.0)
    if kind == "a2":
        X = g14.astype(complex)
        hs = _axial_derivatives(grid, 0.0, "a2")
        axial = (np.ones(grid.ns, complex), np.zeros(grid.ns, complex), np.zeros(grid.ns, complex))
    else:
        X = g14 * beta(dist.theta) * np.exp(-sigma * dist.psi)
        e = np.exp(1j * sigma * grid.s_nodes)
        axial = (e, 1j * sigma * e, -sigma**2 * e)
    chi = grid.chi_x[None, :] * grid.chi_s(0)[:, None]
    ph = np.exp(-1j * t * dist.psi)
    qv = 0.0 if q is None else q
    if mode == "analytic":
        lapX = grid.laplacian0(X)
        body = axial[2][:, None] * X[None, :] + axial[0][:, None] * lapX[None, :]
        f = chi * ph[None, :] * (body - qv * axial[0][:, None] * X[None, :])
    elif mode == "discrete":
        Y = ph * X
        lapY = grid.laplacian0(Y)
        h0, h1, h2 = axial
        body = (h2 - 2 * t * h1 + t * t * h0)[:, None] * Y[None, :] + h0[:, None] * lapY[None, :]
        f = chi * (body - qv * h0[:, None] * Y[None, :])
    else:
        raise ValueError(f"unknown forcing mode {mode!r}")
    return f


def build_cgo(grid, spectrum, surface, omega, tau, sigma, q=None, sign=1, beta=BetaBump(),
              kind=None, mode="analytic", dist=None, gap=RESONANCE_GAP, delta=DELTA, residual=True):
    """Assemble ``u = exp(-sign tau (s + i psi)) (a + r)`` on the cylinder grid.

    ``kind`` selects the amplitude: ``"a1"`` (with alpha and beta, default
    for ``sign=-1``) or ``"a2"`` (``|g|^-1/4`` only, default for ``sign=+1``).
    ``tau`` is nudged off the resonance set of the computed spectrum.
    """
    if kind is None:
        kind = "a1" if sign < 0 else "a2"
    tau_adm, nudge = nudge_tau(tau, spectrum.eigenvalues, gap)
    t = sign * tau_adm
    dist = dist if dist is not None else polar_nodes(surface, omega)
    qv = grid.evaluate(q)
    f = forcing(grid, dist, sigma, t, qv, beta, kind, mode)
    w, sol, norms = carleman_solve(grid, spectrum, f, t, qv, delta)
    a = amplitude_nodes(grid, dist, sigma, beta, kind)
    r = np.exp(1j * t * dist.psi)[None, :] * w
    # analytic forcing: report the norm of the uncut (Laplacian_g - q) a over M
    fn = _restricted_l2(grid, f)
    cg = CgoSolution(tau_adm, sigma, np.asarray(omega, float), sign, a, r, dist.psi, grid.s_nodes.copy(), grid,
                     w, spectrum.synthesize(sol.dw).T, fn, norms, {}, nudge)
    cg.modal = sol
    if residual:
        cg.residual_report = residual_report(cg, qv)
    return cg


def _restricted_l2(grid, F):
    m = grid.surface.volume_weights
    sel = grid.in_M_x
    sw = _simpson_s(grid.ns, grid.ds) * grid.in_M_s
    return float(np.sqrt(np.sum(sw[:, None] * m[None, sel] * np.abs(F[:, sel]) ** 2)))


def _grad_sq(grid, U):
    """``sum |grad_0 U|^2 dV`` per axial slice over links with both ends in M."""
    surf = grid.surface
    idx = surf.node_index
    inside = grid.in_M_x
    tot = np.zeros(U.shape[0])
    for di, dj in ((1, 0), (0, 1)):
        a = idx[:-di or None, :-dj or None]
        b = idx[di:, dj:]
        ok = (a >= 0) & (b >= 0)
        a, b = a[ok], b[ok]
        keep = inside[a] & inside[b]
        a, b = a[keep], b[keep]
        tot += np.sum(np.abs(U[:, a] - U[:, b]) ** 2, axis=1)
    return tot  # conformal invariance: |grad|_g^2 dV_g = |grad|^2 dx in 2-D


def h1_on_M(grid, U, dU):
    """``||U||_{H1(M)}`` from nodal values and exact axial derivative."""
    m = grid.surface.volume_weights
    sel = grid.in_M_x
    sw = _simpson_s(grid.ns, grid.ds) * grid.in_M_s
    l2 = np.sum(sw[:, None] * m[None, sel] * (np.abs(U[:, sel]) ** 2 + np.abs(dU[:, sel]) ** 2))
    return float(np.sqrt(l2 + np.sum(sw * _grad_sq(grid, U))))


def l2_on_M(grid, U):
    return _restricted_l2(grid, U)


def residual_report(cg, q=None):
    """Equation residual of the assembled CGO on M.

    The axial operator ``-(d_s - t)^2`` acts on ``W = exp(t s) u`` by 4th-order
    central differences; the transversal Laplacian is the 5-point operator.
    Norms are taken on ``u = exp(-t s) W`` over the interior nodes of M.
    """
    grid = cg.grid
    t = cg.t
    W = cg.conjugated()
    ds = grid.ds
    Wp = np.zeros_like(W)
    Wpp = np.zeros_like(W)
    Wp[2:-2] = (W[:-4] - 8 * W[1:-3] + 8 * W[3:-1] - W[4:]) / (12 * ds)
    Wpp[2:-2] = (-W[:-4] + 16 * W[1:-3] - 30 * W[2:-2] + 16 * W[3:-1] - W[4:]) / (12 * ds * ds)
    R = -(Wpp - 2 * t * Wp + t * t * W) - grid.laplacian0(W)
    if q is not None:
        R = R + q * W
    e = np.exp(-t * grid.s_nodes)[:, None]
    U = e * W
    dU = e * (Wp - t * W)
    res = l2_on_M(grid, e * R)
    h1 = h1_on_M(grid, U, dU)
    return {"residual_l2": res, "u_h1": h1, "relative": res / h1}


def remainder_norms(cg):
    """``(||w||_{L2(M)}, ||w||_{H1(M)})`` for ``w = exp(-i t psi) r``."""
    return l2_on_M(cg.grid, cg.w), h1_on_M(cg.grid, cg.w, cg.dw)


def remainder_decay_fit(grid_factory, spectrum_factory, surface_factory, omega, sigma, q, tau_list,
                        sign=1, beta=BetaBump(), kind=None):
    """Least-squares slope of ``log ||exp(-i tau psi) r||_{L2(M)}`` against ``log tau``.

    The factories return the grid, spectrum and surface to use for each
    ``tau`` (so finer transversal grids can serve larger ``tau``). Returns
    ``(slope, intercept, rows)`` with rows of
    ``(tau, ||w||_L2, ||w||_H1, ||(Lap_g - q) a||_L2(M))``.
    """
    if len(tau_list) < 4:
        raise ValueError("need at least four tau values")
    rows = []
    for tau in tau_list:
        surf = surface_factory(tau)
        grid = grid_factory(tau, surf)
        spec = spectrum_factory(tau, surf)
        cg = build_cgo(grid, spec, surf, omega, tau, sigma, q, sign, beta, kind, residual=False)
        l2, h1 = remainder_norms(cg)
        rows.append((cg.tau, l2, h1, cg.forcing_norm))
    arr = np.array(rows)
    slope, intercept = np.polyfit(np.log(arr[:, 0]), np.log(arr[:, 1]), 1)
    return float(slope), float(intercept), rows
