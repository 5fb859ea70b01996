"""Conformally Euclidean simple surfaces on the closed unit disk.

The transversal surface carries the metric ``g0 = exp(2*lam) (dx^2 + dy^2)``.
Geodesics are integrated as the Hamiltonian system of
``H(x, p) = exp(-2 lam) |p|^2 / 2`` with classical RK4, together with the
scalar Jacobi equation ``J'' + K J = 0`` (``K`` the Gaussian curvature) so
that conjugate points are detected along every traced ray.
"""
from dataclasses import dataclass, field
import json
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.interpolate import RectBivariateSpline

from . import expr
from .errors import BadResolution, NonSimple, StepTooLarge

EXIT_TOL = 1e-9
ENERGY_TOL = 1e-6


def _rot90(v):
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


@dataclass(frozen=True, eq=False)
class SimpleSurface:
    """Closed unit disk with metric ``exp(2 lam)`` times the Euclidean one.

    Build instances with :meth:`from_expression`, :meth:`from_grid`,
    :meth:`euclidean` or :func:`load_surface`; the constructor runs a
    simplicity check unless ``check=False`` is passed to those helpers.
    """

    lam_fn: object
    grad_fns: tuple
    lap_fn: object
    grid_resolution: int
    source: object = None

    # -- construction -------------------------------------------------
    @classmethod
    def from_expression(cls, text, grid_resolution=64, check=True):
        lam, grads, lap = expr.compile_expression(text, ("x", "y"), derivatives=True)
        surf = cls(lam, tuple(grads), lap, int(grid_resolution), source=text)
        if check:
            surf.check_simplicity()
        return surf

    @classmethod
    def from_grid(cls, values, check=True):
        values = np.asarray(values, dtype=float)
        n = values.shape[0]
        if values.shape != (n, n) or n < 4:
            raise BadResolution("gridded lambda must be a square array with n >= 4")
        xs = np.linspace(-1.0, 1.0, n)
        spl = RectBivariateSpline(xs, xs, values, kx=3, ky=3)

        def lam(x, y):
            return spl.ev(x, y)

        def gx(x, y):
            return spl.ev(x, y, dx=1)

        def gy(x, y):
            return spl.ev(x, y, dy=1)

        def lap(x, y):
            return spl.ev(x, y, dx=2) + spl.ev(x, y, dy=2)

        surf = cls(lam, (gx, gy), lap, n, source=values)
        if check:
            surf.check_simplicity()
        return surf

    @classmethod
    def euclidean(cls, grid_resolution=64):
        return cls.from_expression("0", grid_resolution, check=False)

    # -- metric -------------------------------------------------------
    def lam(self, x, y):
        return self.lam_fn(x, y)

    def grad_lam(self, x, y):
        return np.stack([g(x, y) for g in self.grad_fns], axis=-1)

    def lap_lam(self, x, y):
        return self.lap_fn(x, y)

    def curvature(self, x, y):
        """Gaussian curvature ``-exp(-2 lam) * Laplacian(lam)``."""
        return -np.exp(-2.0 * self.lam(x, y)) * self.lap_lam(x, y)

    def norm(self, points, vectors):
        """g0-length of Euclidean-component vectors attached at ``points``."""
        points = np.asarray(points, float)
        lam = self.lam(points[..., 0], points[..., 1])
        return np.exp(lam) * np.linalg.norm(vectors, axis=-1)

    # -- grid ---------------------------------------------------------
    @cached_property
    def axis(self):
        return np.linspace(-1.0, 1.0, self.grid_resolution)

    @property
    def h(self):
        return 2.0 / (self.grid_resolution - 1)

    @cached_property
    def inside(self):
        X, Y = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.hypot(X, Y) < 1.0 - 1e-12

    @cached_property
    def nodes(self):
        """(N, 2) coordinates of the grid nodes strictly inside the disk."""
        X, Y = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.stack([X[self.inside], Y[self.inside]], axis=-1)

    @cached_property
    def node_index(self):
        idx = -np.ones(self.inside.shape, dtype=np.int64)
        idx[self.inside] = np.arange(int(self.inside.sum()))
        return idx

    @cached_property
    def lam_nodes(self):
        return self.lam(self.nodes[:, 0], self.nodes[:, 1])

    @cached_property
    def volume_weights(self):
        """Nodal quadrature weights for dV_g0 (one grid cell per node)."""
        return np.exp(2.0 * self.lam_nodes) * self.h**2

    def to_grid(self, nodal, fill=np.nan):
        out = np.full(self.inside.shape, fill, dtype=np.result_type(nodal, float))
        out[self.inside] = nodal
        return out

    def evaluate(self, fn):
        """Sample a callable ``fn(x, y)`` at the interior nodes."""
        return np.asarray(fn(self.nodes[:, 0], self.nodes[:, 1]))

    @cached_property
    def sup_lambda(self):
        phi = np.linspace(0, 2 * np.pi, 721)
        edge = self.lam(np.cos(phi), np.sin(phi))
        return float(max(np.max(np.abs(self.lam_nodes)), np.max(np.abs(edge))))

    @property
    def t_max(self):
        return 4.0 * 2.0 * np.exp(2.0 * self.sup_lambda)

    # -- boundary -----------------------------------------------------
    def boundary_point(self, phi):
        phi = np.asarray(phi, float)
        return np.stack([np.cos(phi), np.sin(phi)], axis=-1)

    @cached_property
    def _arclength_table(self):
        phi = np.linspace(0.0, 2 * np.pi, 4097)
        dens = np.exp(self.lam(np.cos(phi), np.sin(phi)))
        s = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(phi))])
        return phi, s

    def boundary_arclength(self, phi):
        """g0 arc length of the boundary from angle 0 to ``phi``."""
        table_phi, table_s = self._arclength_table
        phi = np.mod(np.asarray(phi, float), 2 * np.pi)
        return np.interp(phi, table_phi, table_s)

    @property
    def perimeter(self):
        return float(self._arclength_table[1][-1])

    def inward_direction(self, phi, alpha):
        """g0-unit vector at boundary angle ``phi``, at angle ``alpha`` from the inward normal.

        Positive ``alpha`` rotates toward the counter-clockwise tangent.
        """
        phi = np.asarray(phi, float)
        alpha = np.asarray(alpha, float)
        n_out = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        tang = _rot90(n_out)
        lam = self.lam(np.cos(phi), np.sin(phi))
        v = np.cos(alpha)[..., None] * (-n_out) + np.sin(alpha)[..., None] * tang
        return np.exp(-lam)[..., None] * v

    # -- global checks ------------------------------------------------
    def check_simplicity(self, n_omega=16, n_dir=16, step=1e-2):
        """Trace a boundary fan; raise NonSimple on runaway rays or conjugate points."""
        phi = 2 * np.pi * (np.arange(n_omega) + 0.5) / n_omega
        alpha = np.linspace(-0.49 * np.pi, 0.49 * np.pi, n_dir)
        P, A = np.meshgrid(phi, alpha, indexing="ij")
        starts = self.boundary_point(P.ravel())
        dirs = self.inward_direction(P.ravel(), A.ravel())
        trace_rays(self, starts, dirs, step)
        return True

    @cached_property
    def diameter(self):
        phi = 2 * np.pi * (np.arange(32) + 0.5) / 32
        alpha = np.linspace(-0.45 * np.pi, 0.45 * np.pi, 33)
        P, A = np.meshgrid(phi, alpha, indexing="ij")
        res = trace_rays(self, self.boundary_point(P.ravel()),
                         self.inward_direction(P.ravel(), A.ravel()), 5e-3)
        return float(np.max(res.exit_time))


def load_surface(path, check=True):
    """Read a surface specification file (JSON).

    ``{"lambda": "<expression in x, y>" | [[...], ...], "grid_resolution": n}``
    """
    spec = json.loads(Path(path).read_text())
    return surface_from_spec(spec, check=check)


def surface_from_spec(spec, check=True):
    lam = spec.get("lambda", "0")
    n = int(spec.get("grid_resolution", 64))
    if isinstance(lam, str):
        return SimpleSurface.from_expression(lam, n, check=check)
    values = np.asarray(lam, dtype=float)
    surf = SimpleSurface.from_grid(values, check=check)
    if n != values.shape[0]:
        surf = SimpleSurface(surf.lam_fn, surf.grad_fns, surf.lap_fn, n, source=values)
    return surf


# ---------------------------------------------------------------------------
# Hamiltonian geodesic flow
# ---------------------------------------------------------------------------

def _rhs(surface, state):
    x, y = state[:, 0], state[:, 1]
    px, py = state[:, 2], state[:, 3]
    lam = surface.lam(x, y)
    g = surface.grad_lam(x, y)
    e = np.exp(-2.0 * lam)
    pp = px * px + py * py
    kappa = -e * surface.lap_lam(x, y)
    out = np.empty_like(state)
    out[:, 0] = e * px
    out[:, 1] = e * py
    out[:, 2] = e * pp * g[:, 0]
    out[:, 3] = e * pp * g[:, 1]
    out[:, 4] = state[:, 5]
    out[:, 5] = -kappa * state[:, 4]
    return out


def _rk4(surface, state, h):
    h = np.asarray(h, float)
    hc = h[:, None] if h.ndim else h
    k1 = _rhs(surface, state)
    k2 = _rhs(surface, state + 0.5 * hc * k1)
    k3 = _rhs(surface, state + 0.5 * hc * k2)
    k4 = _rhs(surface, state + hc * k3)
    return state + hc / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _initial_state(surface, points, directions):
    points = np.atleast_2d(np.asarray(points, float))
    directions = np.atleast_2d(np.asarray(directions, float))
    lam = surface.lam(points[:, 0], points[:, 1])
    state = np.zeros((len(points), 6))
    state[:, :2] = points
    state[:, 2:4] = np.exp(2.0 * lam)[:, None] * directions
    state[:, 5] = 1.0
    return state


def _energy(surface, state):
    lam = surface.lam(state[:, 0], state[:, 1])
    return np.exp(-2.0 * lam) * (state[:, 2] ** 2 + state[:, 3] ** 2)


def _velocity(surface, state):
    lam = surface.lam(state[:, 0], state[:, 1])
    return np.exp(-2.0 * lam)[:, None] * state[:, 2:4]


@dataclass
class RayBatch:
    """Result of tracing many rays at once.

    ``positions[k, i]`` is ray ``i`` at time ``k * step`` (NaN after exit);
    ``n_inside[i]`` counts the recorded interior samples of ray ``i``.
    """

    step: float
    exit_time: np.ndarray
    exit_point: np.ndarray
    exit_velocity: np.ndarray
    min_jacobi_ratio: np.ndarray
    max_energy_drift: float
    positions: np.ndarray = None
    velocities: np.ndarray = None
    n_inside: np.ndarray = None


def trace_rays(surface, points, directions, step, record=False, energy_tol=ENERGY_TOL):
    """Trace unit-speed geodesics from ``points`` until they leave the disk.

    ``directions`` are Euclidean components of g0-unit vectors. Exit times
    are refined by bisection on the last RK4 step to ``EXIT_TOL``.
    Raises NonSimple on runaway rays or a sign change of the Jacobi field,
    StepTooLarge if the Hamiltonian drifts by more than ``energy_tol``.
    """
    state = _initial_state(surface, points, directions)
    n = len(state)
    e0 = _energy(surface, state)
    alive = np.ones(n, dtype=bool)
    exit_time = np.full(n, np.nan)
    exit_point = np.full((n, 2), np.nan)
    exit_vel = np.full((n, 2), np.nan)
    n_inside = np.zeros(n, dtype=np.int64)
    min_ratio = np.full(n, np.inf)
    drift = 0.0
    pos_hist = [state[:, :2].copy()] if record else None
    vel_hist = [_velocity(surface, state)] if record else None
    t = 0.0
    k = 0
    t_max = surface.t_max
    while alive.any():
        if t > t_max:
            raise NonSimple(f"{int(alive.sum())} rays still inside after T_max={t_max:.3g}")
        ids = np.nonzero(alive)[0]
        cur = state[ids]
        new = _rk4(surface, cur, step)
        r_new = np.hypot(new[:, 0], new[:, 1])
        out = r_new > 1.0
        stay = ~out
        # conjugate points: J must keep the sign it had after leaving t = 0
        jt = new[stay, 4]
        ratio = jt / (t + step)
        min_ratio[ids[stay]] = np.minimum(min_ratio[ids[stay]], ratio)
        if np.any(jt <= 0.0):
            raise NonSimple("Jacobi field vanished: conjugate point along a traced geodesic")
        if out.any():
            oid = ids[out]
            lo = np.zeros(out.sum())
            hi = np.ones(out.sum())
            base = cur[out]
            while np.max(hi - lo) * step > EXIT_TOL:
                mid = 0.5 * (lo + hi)
                trial = _rk4(surface, base, mid * step)
                beyond = np.hypot(trial[:, 0], trial[:, 1]) > 1.0
                hi = np.where(beyond, mid, hi)
                lo = np.where(beyond, lo, mid)
            frac = 0.5 * (lo + hi)
            fin = _rk4(surface, base, frac * step)
            exit_time[oid] = t + frac * step
            exit_point[oid] = fin[:, :2]
            exit_vel[oid] = _velocity(surface, fin)
            drift = max(drift, float(np.max(np.abs(_energy(surface, fin) / e0[oid] - 1.0))))
            alive[oid] = False
        state[ids[stay]] = new[stay]
        n_inside[ids[stay]] += 1
        if stay.any():
            d = np.abs(_energy(surface, new[stay]) / e0[ids[stay]] - 1.0)
            drift = max(drift, float(np.max(d)))
        t += step
        k += 1
        if record:
            p = np.full((n, 2), np.nan)
            v = np.full((n, 2), np.nan)
            p[ids[stay]] = new[stay, :2]
            v[ids[stay]] = _velocity(surface, new[stay])
            pos_hist.append(p)
            vel_hist.append(v)
    if drift > energy_tol:
        raise StepTooLarge(f"Hamiltonian drift {drift:.2e} exceeds {energy_tol:.1e}; reduce step")
    batch = RayBatch(step, exit_time, exit_point, exit_vel, min_ratio, drift)
    if record:
        batch.positions = np.array(pos_hist)
        batch.velocities = np.array(vel_hist)
        batch.n_inside = n_inside
    return batch


def shoot(surface, points, directions, lengths, n_steps=200):
    """Integrate each ray for its own length with ``n_steps`` equal RK4 steps.

    Returns end position, end velocity and the Jacobi scalar ``J`` (``J(0)=0``,
    ``J'(0)=1``). No exit detection: the caller keeps rays inside.
    """
    state = _initial_state(surface, points, directions)
    h = np.asarray(lengths, float) / n_steps
    for _ in range(n_steps):
        state = _rk4(surface, state, h)
    return state[:, :2], _velocity(surface, state), state[:, 4]


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GeodesicPath:
    start: np.ndarray
    direction: np.ndarray
    t: np.ndarray
    positions: np.ndarray
    tangents: np.ndarray
    exit_time: float

    def speed_error(self, surface):
        """max | |tangent|_g0 - 1 | over the samples."""
        return float(np.max(np.abs(surface.norm(self.positions, self.tangents) - 1.0)))


def trace_geodesic(surface, start, direction, step=1e-3):
    """Single geodesic from a boundary point; samples every ``step`` plus the exit."""
    start = np.asarray(start, float)
    direction = np.asarray(direction, float)
    if step <= 0:
        raise ValueError("step must be positive")
    speed = surface.norm(start, direction)
    if abs(speed - 1.0) > 1e-9:
        raise ValueError(f"direction is not g0-unit (|X| = {speed:.12g})")
    batch = trace_rays(surface, start[None], direction[None], step, record=True)
    m = int(batch.n_inside[0]) + 1
    t = np.concatenate([np.arange(m) * step, batch.exit_time])
    pos = np.concatenate([batch.positions[:m, 0], batch.exit_point])
    vel = np.concatenate([batch.velocities[:m, 0], batch.exit_velocity])
    return GeodesicPath(start, direction, t, pos, vel, float(batch.exit_time[0]))


def _frame(surface, omega):
    omega = np.asarray(omega, float)
    n_out = omega / np.linalg.norm(omega)
    tang = _rot90(n_out)
    lam = float(surface.lam(omega[0], omega[1]))
    return n_out, tang, lam


def chart_direction(surface, omega, theta):
    """Inward g0-unit direction at ``omega`` with chart angle ``theta`` in (0, pi).

    ``theta`` is measured from the counter-clockwise tangent, so
    ``theta = pi/2`` is the inward normal.
    """
    n_out, tang, lam = _frame(surface, omega)
    theta = np.asarray(theta, float)
    v = np.cos(theta)[..., None] * tang + np.sin(theta)[..., None] * (-n_out)
    return np.exp(-lam) * v


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Polar normal coordinates of the interior grid nodes seen from ``omega``.

    ``psi`` is the g0 distance (the radial coordinate), ``theta`` the chart
    angle and ``jacobi`` the Jacobi scalar, so ``|g|^(1/4) = sqrt(jacobi)``.
    Arrays are nodal (see ``SimpleSurface.nodes``).
    """

    omega: np.ndarray
    psi: np.ndarray
    theta: np.ndarray
    jacobi: np.ndarray
    surface: SimpleSurface = field(repr=False)

    def grid(self):
        return self.surface.to_grid(self.psi)


def polar_coordinates(surface, omega, points, n_steps=200, tol=1e-12, max_iter=30):
    """Invert the exponential map at ``omega`` by Newton shooting.

    Returns ``(rho, theta, J)`` for each point. Raises NonSimple when the
    shooting does not converge to a unique chart preimage.
    """
    omega = np.asarray(omega, float)
    points = np.atleast_2d(np.asarray(points, float))
    n_out, tang, lam0 = _frame(surface, omega)
    d = points - omega
    dist_e = np.linalg.norm(d, axis=1)
    near = dist_e < 1e-10
    rho = np.zeros(len(points))
    theta = np.full(len(points), 0.5 * np.pi)
    jac = np.zeros(len(points))
    far = ~near
    if not far.any():
        return rho, theta, jac
    pts = points[far]
    dd = d[far] / dist_e[far, None]
    th = np.arctan2(dd @ (-n_out), dd @ tang)
    th = np.clip(th, 1e-6, np.pi - 1e-6)
    lam_mid = surface.lam(0.5 * (pts[:, 0] + omega[0]), 0.5 * (pts[:, 1] + omega[1]))
    r = dist_e[far] * np.exp(lam_mid)
    for _ in range(max_iter):
        end, vel, J = shoot(surface, np.broadcast_to(omega, pts.shape), chart_direction(surface, omega, th), r, n_steps)
        res = end - pts
        err = np.max(np.linalg.norm(res, axis=1))
        # d(end)/d(rho) = vel ; d(end)/d(theta) = J * rot90(vel)
        a11, a21 = vel[:, 0], vel[:, 1]
        nrm = _rot90(vel)
        a12, a22 = J * nrm[:, 0], J * nrm[:, 1]
        det = a11 * a22 - a12 * a21
        dr = (a22 * res[:, 0] - a12 * res[:, 1]) / det
        dt = (-a21 * res[:, 0] + a11 * res[:, 1]) / det
        r = r - dr
        th = th - dt
        if err < tol:
            break
    else:
        raise NonSimple(f"polar-coordinate shooting did not converge (residual {err:.2e})")
    if np.any(th <= 0) or np.any(th >= np.pi) or np.any(J <= 0) or np.any(r <= 0):
        raise NonSimple("exponential map at the boundary point is not a diffeomorphism")
    rho[far], theta[far], jac[far] = r, th, J
    return rho, theta, jac


def boundary_distance_field(surface, omega, n_steps=200):
    """Distance function psi = dist_g0(omega, .) on the interior grid nodes."""
    rho, theta, J = polar_coordinates(surface, omega, surface.nodes, n_steps=n_steps)
    return DistanceField(np.asarray(omega, float), rho, theta, J, surface)


def eikonal_residual(surface, psi_nodal, omega, exclude=0.05):
    """max | |d psi|_g0^2 - 1 | by central differences.

    Only nodes whose 4-neighbour stencil is inside the disk and that lie
    farther than ``exclude`` from ``omega`` take part.
    """
    grid = surface.to_grid(psi_nodal)
    h = surface.h
    inner = np.zeros_like(surface.inside)
    inner[1:-1, 1:-1] = (surface.inside[1:-1, 1:-1] & surface.inside[2:, 1:-1] & surface.inside[:-2, 1:-1]
                         & surface.inside[1:-1, 2:] & surface.inside[1:-1, :-2])
    gx = np.zeros_like(grid)
    gy = np.zeros_like(grid)
    gx[1:-1, :] = (grid[2:, :] - grid[:-2, :]) / (2 * h)
    gy[:, 1:-1] = (grid[:, 2:] - grid[:, :-2]) / (2 * h)
    X, Y = np.meshgrid(surface.axis, surface.axis, indexing="ij")
    far = np.hypot(X - omega[0], Y - omega[1]) > exclude
    sel = inner & far
    lam = surface.lam(X[sel], Y[sel])
    val = np.exp(-2 * lam) * (gx[sel] ** 2 + gy[sel] ** 2)
    return float(np.max(np.abs(val - 1.0)))


@dataclass(frozen=True, eq=False)
class PolarChart:
    base_point: np.ndarray
    rho_grid: np.ndarray
    theta_grid: np.ndarray
    positions: np.ndarray  # (nrho, ntheta, 2); NaN beyond the exit time
    jacobian_sqrt: np.ndarray  # (nrho, ntheta)
    exit_times: np.ndarray  # (ntheta,)

    @property
    def valid(self):
        return np.isfinite(self.positions[..., 0])


def polar_chart(surface, omega, nrho, ntheta, step=2.5e-3):
    """Riemannian polar normal coordinates centred at the boundary point ``omega``.

    ``theta`` takes midpoints of (0, pi); ``rho`` runs over (0, R] with
    ``R = diam_g0``. Positions are the geodesic points ``gamma(rho; omega, X(theta))``.
    """
    omega = np.asarray(omega, float)
    R = surface.diameter
    theta = np.pi * (np.arange(ntheta) + 0.5) / ntheta
    drho = R / nrho
    sub = max(1, int(np.ceil(drho / step)))
    h = drho / sub
    dirs = chart_direction(surface, omega, theta)
    state = _initial_state(surface, np.broadcast_to(omega, (ntheta, 2)), dirs)
    pos = np.full((nrho, ntheta, 2), np.nan)
    jac = np.full((nrho, ntheta), np.nan)
    exits = trace_rays(surface, np.broadcast_to(omega, (ntheta, 2)), dirs, step).exit_time
    alive = np.ones(ntheta, dtype=bool)
    for k in range(nrho):
        for _ in range(sub):
            state = _rk4(surface, state, h)
        rho_k = (k + 1) * drho
        alive &= rho_k < exits
        if not alive.any():
            break
        if np.any(state[alive, 4] <= 0):
            raise NonSimple("polar chart folds over (Jacobian changed sign)")
        pos[k, alive] = state[alive, :2]
        jac[k, alive] = np.sqrt(state[alive, 4])
    rho = drho * (np.arange(nrho) + 1)
    return PolarChart(omega, rho, theta, pos, jac, exits)


@dataclass(frozen=True, eq=False)
class BoundaryFan:
    """Quadrature on the inward boundary directions with mu > delta_fan.

    Nodes are ``(phi_i, alpha_j)``: boundary angle and angle from the inward
    normal. ``weights`` carry ``dA_g0 * d alpha``; the Santalo factor ``mu``
    is kept separately so both the flat and the mu-weighted measures are
    available.
    """

    phi: np.ndarray
    alpha: np.ndarray
    delta_fan: float
    points: np.ndarray  # (n_omega, n_dir, 2)
    directions: np.ndarray  # (n_omega, n_dir, 2)
    weights: np.ndarray  # (n_omega, n_dir)
    santalo: np.ndarray  # (n_omega, n_dir)

    @property
    def shape(self):
        return self.weights.shape

    @property
    def alpha_max(self):
        return float(np.arccos(self.delta_fan))

    def total_measure(self):
        return float(np.sum(self.weights * self.santalo))

    def locate(self, phi, alpha):
        """Bilinear interpolation stencil on the fan grid.

        Returns ``(flat indices (..., 4), weights (..., 4))``; weights are zero
        for directions outside ``|alpha| <= alpha_max`` (data vanishes near
        tangential directions). Periodic in ``phi``; clamped in ``alpha``
        between the outermost node and ``alpha_max``.
        """
        n_om, n_dir = self.shape
        phi = np.mod(np.asarray(phi, float), 2 * np.pi)
        alpha = np.asarray(alpha, float)
        dphi = 2 * np.pi / n_om
        fp = phi / dphi - 0.5
        i0 = np.floor(fp).astype(np.int64)
        wp = fp - i0
        i0 = np.mod(i0, n_om)
        i1 = np.mod(i0 + 1, n_om)
        da = self.alpha[1] - self.alpha[0]
        fa = (np.clip(alpha, self.alpha[0], self.alpha[-1]) - self.alpha[0]) / da
        j0 = np.clip(np.floor(fa).astype(np.int64), 0, n_dir - 2)
        wa = fa - j0
        j1 = j0 + 1
        keep = (np.abs(alpha) <= self.alpha_max).astype(float)
        idx = np.stack([i0 * n_dir + j0, i0 * n_dir + j1, i1 * n_dir + j0, i1 * n_dir + j1], axis=-1)
        w = np.stack([(1 - wp) * (1 - wa), (1 - wp) * wa, wp * (1 - wa), wp * wa], axis=-1)
        return idx, w * keep[..., None]


def build_fan(surface, n_omega, n_dir, delta_fan=0.05):
    """Midpoint quadrature fan on the inward directions with mu > delta_fan."""
    if n_dir < 4:
        raise BadResolution("n_dir must be at least 4")
    if n_omega < 1:
        raise BadResolution("n_omega must be positive")
    if not 0.0 < delta_fan < 1.0:
        raise ValueError("delta_fan must lie in (0, 1)")
    amax = np.arccos(delta_fan)
    phi = 2 * np.pi * (np.arange(n_omega) + 0.5) / n_omega
    alpha = -amax + 2 * amax * (np.arange(n_dir) + 0.5) / n_dir
    P, A = np.meshgrid(phi, alpha, indexing="ij")
    pts = surface.boundary_point(P)
    dirs = surface.inward_direction(P, A)
    dA = np.exp(surface.lam(np.cos(phi), np.sin(phi))) * (2 * np.pi / n_omega)
    weights = dA[:, None] * (2 * amax / n_dir) * np.ones_like(A)
    mu = np.cos(A)
    return BoundaryFan(phi, alpha, float(delta_fan), pts, dirs, weights, mu)


def fan_coordinates(surface, points, directions):
    """Boundary angle and inward-normal angle of boundary covectors.

    ``directions`` must point into the disk; returns ``(phi, alpha)``.
    """
    points = np.asarray(points, float)
    directions = np.asarray(directions, float)
    phi = np.arctan2(points[..., 1], points[..., 0])
    n_out = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    tang = _rot90(n_out)
    alpha = np.arctan2(np.sum(directions * tang, -1), np.sum(directions * (-n_out), -1))
    return np.mod(phi, 2 * np.pi), alpha
