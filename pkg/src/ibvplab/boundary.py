"""Forward solver, DN maps and Cauchy-data distances on the cylinder segment.

The domain is a box or a cylinder segment ``[-S, S] x {|x| <= R}`` sampled on
a Cartesian grid in ``(s, x, y)``. The Dirichlet form of
``g = c (ds^2 + exp(2 lam)(dx^2 + dy^2))`` in three dimensions becomes a
symmetric graph Laplacian with link weights

    s-links:  sqrt(c) exp(2 lam) * dual face area / length
    x, y links: sqrt(c)          * dual face area / length

where ``sqrt(c)`` on a link is ``(c_i c_j)^(1/4)``. With this choice the
conformal-to-Schroedinger reduction holds exactly at the discrete level.
Dual cells are halved on the extreme grid planes (trapezoid rule).
"""
from dataclasses import dataclass, field
from functools import cached_property
import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import pyamg

from . import expr, spectral
from .errors import (DegenerateJacobian, EigenvalueAtZero, MeshMismatch, NonPositiveFactor,
                     SolverFailure)

SOLVER_RTOL = 1e-10
N_BOUNDARY_MODES = 64
DIM = 3
CONFORMAL_EXPONENT = (DIM - 2) / 4  # c^{(n-2)/4}


# ---------------------------------------------------------------------------
# potentials and conformal factors
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Potential:
    """Real potential ``q(s, x, y)`` forced to vanish outside its support.

    The support is ``|s| <= s_max`` and ``|(x, y) - center| <= radius``.
    """

    fn: object
    s_max: float = 0.8
    radius: float = 0.5
    center: tuple = (0.0, 0.0)
    label: str = ""

    def __call__(self, s, x, y):
        s, x, y = np.broadcast_arrays(np.asarray(s, float), np.asarray(x, float), np.asarray(y, float))
        inside = (np.abs(s) <= self.s_max) & (np.hypot(x - self.center[0], y - self.center[1]) <= self.radius)
        out = np.zeros(s.shape)
        if inside.any():
            out[inside] = np.broadcast_to(self.fn(s[inside], x[inside], y[inside]), (int(inside.sum()),))
        return out

    @classmethod
    def from_expression(cls, text, **support):
        fn = expr.compile_expression(text, ("s", "x", "y"))
        return cls(fn, label=text, **support)

    @classmethod
    def zero(cls):
        return cls(lambda s, x, y: np.zeros(np.shape(s)), label="0")

    def scaled(self, t):
        fn = self.fn
        return Potential(lambda s, x, y: t * fn(s, x, y), self.s_max, self.radius, self.center,
                         f"{t}*({self.label})")

    def __add__(self, other):
        f, g = self, other
        s_max = max(f.s_max, g.s_max)
        if f.center != g.center:
            raise ValueError("potentials must share a support centre")
        return Potential(lambda s, x, y: f(s, x, y) + g(s, x, y), s_max, max(f.radius, g.radius), f.center,
                         f"({f.label})+({g.label})")

    def __sub__(self, other):
        return self + other.scaled(-1.0)

    def sup_norm(self, n=41):
        s = np.linspace(-self.s_max, self.s_max, n)
        r = np.linspace(0, self.radius, n // 2 + 1)
        th = np.linspace(0, 2 * np.pi, n, endpoint=False)
        S, R, T = np.meshgrid(s, r, th, indexing="ij")
        return float(np.max(np.abs(self(S, self.center[0] + R * np.cos(T), self.center[1] + R * np.sin(T)))))

    def sobolev_lambda_norm(self, lam, cyl_grid, spectrum):
        """Tensor spectral ``H^lam`` norm on the cylinder (see spectral.cylinder_sobolev_norm)."""
        q = cyl_grid.evaluate(self)
        return spectral.cylinder_sobolev_norm(q, lam, spectrum, cyl_grid.ds)


def load_potential(path):
    """``{"expression": "...", "s_max": .., "radius": .., "center": [x, y]}``"""
    spec = json.loads(Path(path).read_text())
    return potential_from_spec(spec)


def potential_from_spec(spec):
    kw = {k: spec[k] for k in ("s_max", "radius") if k in spec}
    if "center" in spec:
        kw["center"] = tuple(spec["center"])
    return Potential.from_expression(spec.get("expression", "0"), **kw)


@dataclass(eq=False)
class ConformalFactor:
    """Positive conformal factor ``c(s, x, y)``."""

    fn: object
    label: str = ""

    @classmethod
    def from_expression(cls, text):
        return cls(expr.compile_expression(text, ("s", "x", "y")), text)

    def values(self, coords):
        v = np.broadcast_to(np.asarray(self.fn(coords[:, 0], coords[:, 1], coords[:, 2]), float), (len(coords),))
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise NonPositiveFactor("conformal factor must be positive and finite")
        return np.array(v)

    def bounds(self, grid):
        """``(||1/c||_inf, ||c||_C3)`` with derivatives by grid differences."""
        c = grid.full_array(self.values(grid.coords), fill=np.nan)
        inv = float(np.nanmax(1.0 / c))
        hs = (grid.hs, grid.hx, grid.hx)
        norm = float(np.nanmax(np.abs(c)))
        arrs = [c]
        for _ in range(3):
            nxt = []
            for a in arrs:
                for ax in range(3):
                    d = np.diff(a, axis=ax) / hs[ax]
                    nxt.append(d)
                    norm = max(norm, float(np.nanmax(np.abs(d))) if np.isfinite(d).any() else 0.0)
            arrs = nxt
        return inv, norm


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class DomainGrid:
    """Cartesian sampling of a box or cylinder segment in ``(s, x, y)``.

    ``kind="cylinder"``: ``[-S, S] x {x^2 + y^2 <= R^2}`` with a staircase
    lateral boundary. ``kind="box"``: ``[-S, S] x [-R, R]^2``.
    ``lam`` is the transversal log-conformal factor (callable of ``x, y``).
    """

    kind: str = "cylinder"
    S: float = 1.0
    R: float = 0.6
    n_s: int = 48
    n_x: int = 48
    lam: object = None

    def __post_init__(self):
        if self.kind not in ("box", "cylinder"):
            raise ValueError("kind must be 'box' or 'cylinder'")

    @property
    def hs(self):
        return 2 * self.S / (self.n_s - 1)

    @property
    def hx(self):
        return 2 * self.R / (self.n_x - 1)

    @cached_property
    def axes(self):
        return (np.linspace(-self.S, self.S, self.n_s), np.linspace(-self.R, self.R, self.n_x),
                np.linspace(-self.R, self.R, self.n_x))

    @cached_property
    def mask(self):
        s, x, y = self.axes
        if self.kind == "box":
            return np.ones((self.n_s, self.n_x, self.n_x), bool)
        X, Y = np.meshgrid(x, y, indexing="ij")
        disk = np.hypot(X, Y) <= self.R * (1 + 1e-9)
        return np.broadcast_to(disk[None], (self.n_s, self.n_x, self.n_x)).copy()

    @cached_property
    def index(self):
        idx = -np.ones(self.mask.shape, np.int64)
        idx[self.mask] = np.arange(int(self.mask.sum()))
        return idx

    @cached_property
    def coords(self):
        s, x, y = self.axes
        S, X, Y = np.meshgrid(s, x, y, indexing="ij")
        return np.stack([S[self.mask], X[self.mask], Y[self.mask]], -1)

    @property
    def n_nodes(self):
        return len(self.coords)

    def full_array(self, nodal, fill=0.0):
        out = np.full(self.mask.shape, fill, dtype=np.result_type(nodal, float))
        out[self.mask] = nodal
        return out

    @cached_property
    def _halving(self):
        """Per-axis trapezoid factors (n_s, n_x, n_x, 3)."""
        f = np.ones(self.mask.shape + (3,))
        f[0, :, :, 0] = f[-1, :, :, 0] = 0.5
        if self.kind == "box":
            f[:, 0, :, 1] = f[:, -1, :, 1] = 0.5
            f[:, :, 0, 2] = f[:, :, -1, 2] = 0.5
        return f

    @cached_property
    def lam_nodes(self):
        if self.lam is None:
            return np.zeros(self.n_nodes)
        return np.asarray(np.broadcast_to(self.lam(self.coords[:, 1], self.coords[:, 2]), (self.n_nodes,)), float)

    @cached_property
    def dual_volume(self):
        h = self._halving
        return (h[..., 0] * h[..., 1] * h[..., 2])[self.mask] * self.hs * self.hx * self.hx

    @cached_property
    def links(self):
        """``(i, j, axis, dual face area / length)`` for every grid link inside the domain."""
        out = []
        spac = (self.hs, self.hx, self.hx)
        h = self._halving
        for ax in range(3):
            sl_a = [slice(None)] * 3
            sl_b = [slice(None)] * 3
            sl_a[ax] = slice(None, -1)
            sl_b[ax] = slice(1, None)
            a = self.index[tuple(sl_a)]
            b = self.index[tuple(sl_b)]
            ok = (a >= 0) & (b >= 0)
            others = [k for k in range(3) if k != ax]
            # the link's dual face is halved along the other axes on extreme planes
            fac = (h[tuple(sl_a)][..., others[0]] * h[tuple(sl_a)][..., others[1]])[ok]
            area = spac[others[0]] * spac[others[1]]
            out.append((a[ok], b[ok], np.full(ok.sum(), ax), fac * area / spac[ax]))
        i = np.concatenate([o[0] for o in out])
        j = np.concatenate([o[1] for o in out])
        axis = np.concatenate([o[2] for o in out])
        geo = np.concatenate([o[3] for o in out])
        return i, j, axis, geo

    @cached_property
    def boundary(self):
        """Boolean nodal mask of boundary nodes."""
        full = np.zeros(self.mask.shape, bool)
        full[0] = full[-1] = True
        if self.kind == "box":
            full[:, 0, :] = full[:, -1, :] = True
            full[:, :, 0] = full[:, :, -1] = True
        else:
            m = self.mask
            pad = np.pad(m, ((0, 0), (1, 1), (1, 1)), constant_values=False)
            missing = ~(pad[:, 2:, 1:-1] & pad[:, :-2, 1:-1] & pad[:, 1:-1, 2:] & pad[:, 1:-1, :-2])
            full |= m & missing
        return full[self.mask]

    @cached_property
    def boundary_nodes(self):
        return np.flatnonzero(self.boundary)

    @cached_property
    def interior_nodes(self):
        return np.flatnonzero(~self.boundary)

    @cached_property
    def boundary_area(self):
        """Nodal area weights of the boundary surface (Euclidean in (s, x, y))."""
        B = self.boundary_nodes
        c = self.coords[B]
        area = np.zeros(len(B))
        h = self._halving[self.mask][B]
        cap = np.isclose(np.abs(c[:, 0]), self.S)
        area[cap] += self.hx * self.hx * h[cap, 1] * h[cap, 2]
        if self.kind == "box":
            for ax, half in ((1, self.R), (2, self.R)):
                face = np.isclose(np.abs(c[:, ax]), half)
                other = 2 if ax == 1 else 1
                area[face] += self.hs * self.hx * h[face, 0] * h[face, other]
        else:
            lateral = self._lateral_mask(c)
            for k in np.unique(np.round(c[lateral, 0], 12)):
                sel = np.flatnonzero(lateral & np.isclose(c[:, 0], k))
                ang = np.arctan2(c[sel, 2], c[sel, 1])
                order = np.argsort(ang)
                a = ang[order]
                gaps = np.diff(np.concatenate([a, [a[0] + 2 * np.pi]]))
                share = 0.5 * (gaps + np.roll(gaps, 1)) * self.R
                area[sel[order]] += share * self.hs * h[sel[order], 0]
        return area

    def _lateral_mask(self, c):
        B = self.boundary_nodes
        full = np.zeros(self.mask.shape, bool)
        m = self.mask
        pad = np.pad(m, ((0, 0), (1, 1), (1, 1)), constant_values=False)
        missing = ~(pad[:, 2:, 1:-1] & pad[:, :-2, 1:-1] & pad[:, 1:-1, 2:] & pad[:, 1:-1, :-2])
        full |= m & missing
        return full[self.mask][B]

    def boundary_normals(self):
        """Outward unit normals (Euclidean) at boundary nodes; zero where undefined."""
        c = self.coords[self.boundary_nodes]
        nrm = np.zeros_like(c)
        cap = np.isclose(np.abs(c[:, 0]), self.S)
        nrm[cap, 0] = np.sign(c[cap, 0])
        if self.kind == "box":
            for ax in (1, 2):
                face = np.isclose(np.abs(c[:, ax]), self.R)
                nrm[face, ax] += np.sign(c[face, ax])
        else:
            lat = self._lateral_mask(c)
            r = np.hypot(c[lat, 1], c[lat, 2])
            nrm[lat, 1] += c[lat, 1] / r
            nrm[lat, 2] += c[lat, 2] / r
        n = np.linalg.norm(nrm, axis=1)
        return np.where(n[:, None] > 0, nrm / np.where(n > 0, n, 1)[:, None], 0.0)

    @cached_property
    def hash(self):
        import hashlib
        h = hashlib.sha256()
        h.update(json.dumps([self.kind, self.S, self.R, self.n_s, self.n_x]).encode())
        h.update(np.ascontiguousarray(self.lam_nodes).tobytes())
        return h.hexdigest()[:16]

    # -- boundary basis -------------------------------------------------
    @cached_property
    def boundary_graph(self):
        """Edges between boundary nodes with their g'-lengths."""
        B = self.boundary_nodes
        pos = -np.ones(self.n_nodes, np.int64)
        pos[B] = np.arange(len(B))
        i, j, axis, _ = self.links
        keep = (pos[i] >= 0) & (pos[j] >= 0)
        ei, ej = pos[i[keep]], pos[j[keep]]
        if self.kind == "cylinder":
            # in-plane diagonals close the staircase ring
            idx = self.index
            for dy in (1, -1):
                a = idx[:, :-1, :-1] if dy == 1 else idx[:, :-1, 1:]
                b = idx[:, 1:, 1:] if dy == 1 else idx[:, 1:, :-1]
                ok = (a >= 0) & (b >= 0)
                a, b = a[ok], b[ok]
                both = (pos[a] >= 0) & (pos[b] >= 0)
                ei = np.concatenate([ei, pos[a[both]]])
                ej = np.concatenate([ej, pos[b[both]]])
        c = self.coords[B]
        d = c[ej] - c[ei]
        lam_mid = 0.5 * (self.lam_nodes[B][ei] + self.lam_nodes[B][ej])
        length = np.sqrt(d[:, 0] ** 2 + np.exp(2 * lam_mid) * (d[:, 1] ** 2 + d[:, 2] ** 2))
        return np.stack([ei, ej], -1), length

    def boundary_basis(self, count=N_BOUNDARY_MODES):
        key = ("basis", count)
        cache = self.__dict__.setdefault("_basis_cache", {})
        if key not in cache:
            edges, length = self.boundary_graph
            cache[key] = spectral.boundary_basis(self.boundary_area, edges, length, count)
        return cache[key]


# ---------------------------------------------------------------------------
# discrete operators
# ---------------------------------------------------------------------------

def _c_nodes(grid, c):
    if c is None:
        return np.ones(grid.n_nodes)
    if isinstance(c, ConformalFactor):
        return c.values(grid.coords)
    v = np.asarray(c, float)
    if np.any(v <= 0):
        raise NonPositiveFactor("conformal factor must be positive")
    return v


def stiffness(grid, c=None):
    """Dirichlet-form matrix of ``g = c g'`` on all nodes."""
    i, j, axis, geo = grid.links
    cv = _c_nodes(grid, c)
    root = (cv[i] * cv[j]) ** 0.25  # sqrt(c) on the link
    lam = grid.lam_nodes
    metric = np.where(axis == 0, np.exp(lam[i] + lam[j]), 1.0)
    w = root * metric * geo
    n = grid.n_nodes
    W = sp.coo_matrix((np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n)).tocsr()
    return (sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()


def mass(grid, c=None):
    """Nodal volume weights of ``dV_g``."""
    cv = _c_nodes(grid, c)
    return cv**1.5 * np.exp(2 * grid.lam_nodes) * grid.dual_volume


def _q_nodes(grid, q):
    if q is None:
        return np.zeros(grid.n_nodes)
    if callable(q):
        return np.asarray(q(grid.coords[:, 0], grid.coords[:, 1], grid.coords[:, 2]), float)
    return np.asarray(q, float)


def system_matrix(grid, q=None, c=None):
    return (stiffness(grid, c) + sp.diags(_q_nodes(grid, q) * mass(grid, c))).tocsr()


@dataclass(eq=False)
class _Solver:
    K: object
    II: object
    IB: object
    amg: object
    indefinite: bool


_SOLVERS = {}


def _amg(A):
    # pyamg estimates spectral radii from np.random; seed it locally for reproducible hierarchies
    state = np.random.get_state()
    np.random.seed(0)
    try:
        return pyamg.smoothed_aggregation_solver(A, max_coarse=200)
    finally:
        np.random.set_state(state)


def _solver(grid, q=None, c=None, check=True):
    qv = _q_nodes(grid, q)
    cv = _c_nodes(grid, c)
    key = (id(grid), qv.tobytes(), cv.tobytes())
    hit = _SOLVERS.get(key)
    if hit is not None:
        return hit
    K = system_matrix(grid, qv, cv)
    I, B = grid.interior_nodes, grid.boundary_nodes
    II = K[I][:, I].tocsr()
    IB = K[I][:, B].tocsr()
    L_II = stiffness(grid, cv)[I][:, I].tocsr()
    amg = _amg(L_II)
    indefinite = bool(np.any(qv < 0))
    if indefinite and check:
        _check_zero_eigenvalue(II, mass(grid, cv)[I], amg)
    s = _Solver(K, II, IB, amg, indefinite)
    if len(_SOLVERS) >= 6:
        _SOLVERS.pop(next(iter(_SOLVERS)))
    _SOLVERS[key] = s
    return s


def _check_zero_eigenvalue(II, m, amg, rel_gap=1e-3):
    """Raise EigenvalueAtZero if ``M^-1 K_II`` has an eigenvalue near zero."""
    n = II.shape[0]
    rng = np.random.default_rng(0)
    X = rng.standard_normal((n, 1))
    M = sp.diags(m)
    # eigenvalue of smallest magnitude via shift-invert on the generalized problem
    try:
        vals = spla.eigsh(II.tocsc(), k=1, M=M.tocsc(), sigma=0.0, which="LM", return_eigenvectors=False, v0=X[:, 0])
    except Exception as exc:  # factorisation failure means a singular matrix
        raise EigenvalueAtZero(f"system matrix is singular: {exc}") from exc
    ref = spla.lobpcg(II, X, M=amg.aspreconditioner(), B=M, largest=False, tol=1e-6, maxiter=200)[0]
    lam0 = float(vals[0])
    if abs(lam0) < rel_gap * max(abs(float(ref[0])), 1.0) * 1e-3 + 1e-12:
        raise EigenvalueAtZero(f"0 is (nearly) a Dirichlet eigenvalue: lambda = {lam0:.3e}")
    return lam0


def _solve_interior(solver, rhs, rtol):
    M = solver.amg.aspreconditioner()
    out = np.zeros_like(rhs)
    for k in range(rhs.shape[1]):
        b = rhs[:, k]
        if not np.any(b):
            continue
        if solver.indefinite:
            x, info = spla.minres(solver.II, b, M=M, rtol=rtol, maxiter=5000)
        else:
            x, info = spla.cg(solver.II, b, M=M, rtol=rtol, maxiter=5000)
        if info != 0:
            raise SolverFailure(f"iterative solve did not converge (info={info})")
        out[:, k] = x
    return out


def forward_solve(grid, q=None, f=None, c=None, rtol=SOLVER_RTOL):
    """Discrete weak solution of ``(-Laplacian_g + q) u = 0`` with ``u|_B = f``.

    ``f`` is a nodal boundary trace (array over ``grid.boundary_nodes``) or a
    callable ``f(s, x, y)``; a 2-D array solves for several traces at once.
    """
    B = grid.boundary_nodes
    if callable(f):
        cb = grid.coords[B]
        f = np.asarray(f(cb[:, 0], cb[:, 1], cb[:, 2]), float)
    f = np.asarray(f, float)
    single = f.ndim == 1
    F = f[:, None] if single else f
    solver = _solver(grid, q, c)
    rhs = -(solver.IB @ F)
    uI = _solve_interior(solver, rhs, rtol)
    U = np.zeros((grid.n_nodes, F.shape[1]))
    U[B] = F
    U[grid.interior_nodes] = uI
    return U[:, 0] if single else U


def weak_normal_derivative(grid, u, q=None, c=None):
    """Boundary functional ``w_B = (K u)_B``; pairs with traces by plain sums.

    Returns ``(w, nu)`` where ``nu = w / area`` approximates the conormal
    derivative nodewise.
    """
    K = system_matrix(grid, q, c)
    w = (K @ u)[grid.boundary_nodes]
    area = grid.boundary_area
    return w, w / area[(slice(None),) + (None,) * (w.ndim - 1)]


@dataclass(eq=False)
class DnMap:
    """DN map projected on the boundary eigenbasis.

    ``matrix[j, k] = <Lambda phi_k, phi_j>`` for the area-orthonormal boundary
    modes ``phi``; ``weights`` are ``1 + mu_k``.
    """

    grid: object
    basis: object
    matrix: np.ndarray
    tag: str = ""

    @property
    def weights(self):
        return 1.0 + np.maximum(self.basis.eigenvalues, 0.0)

    def symmetry_error(self):
        A = self.matrix
        return float(np.linalg.norm(A - A.T, 2) / np.linalg.norm(A, 2))

    def apply(self, trace):
        """Functional values ``(Lambda f)_B`` for a trace in the span of the basis."""
        c = self.basis.coefficients(trace)
        return self.basis.area * (self.basis.modes @ (self.matrix @ c))

    def pairing(self, f, g):
        return float(self.basis.coefficients(g) @ self.matrix @ self.basis.coefficients(f))

    def star_matrix(self):
        d = self.weights ** -0.25
        return d[:, None] * self.matrix * d[None, :]


def dn_map(grid, q=None, c=None, count=N_BOUNDARY_MODES, rtol=SOLVER_RTOL, tag=""):
    """Schur complement onto the boundary, projected on ``count`` boundary modes."""
    basis = grid.boundary_basis(count)
    U = forward_solve(grid, q, basis.modes, c, rtol)
    K = system_matrix(grid, q, c)
    W = (K @ U)[grid.boundary_nodes]
    return DnMap(grid, basis, basis.modes.T @ W, tag)


def power_norm(A, iters=500, tol=1e-13, seed=0):
    """Spectral norm by power iteration on ``A^T A``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        new = np.sqrt(nw)
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return float(est)


@dataclass(frozen=True)
class CauchyDistance:
    epsilon: float
    method: str = "operator-norm upper bound H^1/2 -> H^-1/2"


def cauchy_dist(dn1, dn2):
    """``||Lambda_1 - Lambda_2||_*`` as an upper bound of the Cauchy-data distance."""
    if dn1.grid is not dn2.grid and dn1.grid.hash != dn2.grid.hash:
        raise MeshMismatch("DN maps live on different meshes")
    if dn1.matrix.shape != dn2.matrix.shape:
        raise MeshMismatch("DN maps use different boundary bases")
    d = dn1.weights ** -0.25
    D = d[:, None] * (dn1.matrix - dn2.matrix) * d[None, :]
    return CauchyDistance(power_norm(D))


# ---------------------------------------------------------------------------
# conformal reduction
# ---------------------------------------------------------------------------

def conformal_to_potential(grid, c):
    """``q = c^{-1/4} Laplacian_{g'} c^{1/4}`` with the discrete g'-Laplacian.

    Only interior rows are meaningful (boundary rows lack outside neighbours)
    and boundary values are set to zero.
    """
    cv = _c_nodes(grid, c)
    a = cv**CONFORMAL_EXPONENT
    L = stiffness(grid)
    m = mass(grid)
    q = -(L @ a) / (a * m)
    q[grid.boundary_nodes] = 0.0
    return q


def conformal_solution(grid, c, f, rtol=SOLVER_RTOL):
    """Solve the conductivity problem for ``g = c g'`` and return ``(u, v = c^{1/4} u)``."""
    u = forward_solve(grid, None, f, c, rtol)
    return u, _c_nodes(grid, c) ** CONFORMAL_EXPONENT * u


# ---------------------------------------------------------------------------
# pushforward gauge on a simplicial mesh
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TetMesh:
    nodes: np.ndarray
    tets: np.ndarray
    boundary: np.ndarray  # bool per node


_KUHN = np.array([[0, 1, 3, 7], [0, 1, 5, 7], [0, 2, 3, 7], [0, 2, 6, 7], [0, 4, 5, 7], [0, 4, 6, 7]])


def kuhn_mesh(n, half=1.0):
    """Cube ``[-half, half]^3`` with ``n`` nodes per axis, six tetrahedra per cell."""
    ax = np.linspace(-half, half, n)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    nodes = np.stack([X.ravel(), Y.ravel(), Z.ravel()], -1)
    idx = np.arange(n**3).reshape(n, n, n)
    c = np.stack([idx[dx:n - 1 + dx, dy:n - 1 + dy, dz:n - 1 + dz].ravel()
                  for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)], -1)
    # corner k has bits (dx, dy, dz) = (k & 1, k >> 1 & 1, k >> 2 & 1)
    tets = c[:, _KUHN].reshape(-1, 4)
    bnd = np.any(np.isclose(np.abs(nodes), half), axis=1)
    return TetMesh(nodes, tets, bnd)


def _tet_geometry(nodes, tets):
    P = nodes[tets]
    E = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0], P[:, 3] - P[:, 0]], -1)  # columns are edges
    det = np.linalg.det(E)
    return P, E, det


def p1_stiffness(nodes, tets, gamma):
    """P1 stiffness ``sum_T |T| grad(phi)^T gamma_T grad(phi)`` (``gamma`` per tet)."""
    P, E, det = _tet_geometry(nodes, tets)
    vol = np.abs(det) / 6
    Einv = np.linalg.inv(E)  # rows: gradients of barycentric coords 1..3
    G = np.concatenate([-Einv.sum(axis=1, keepdims=True), Einv], axis=1)  # (T, 4, 3)
    loc = vol[:, None, None] * np.einsum("tai,tij,tbj->tab", G, gamma, G)
    rows = np.repeat(tets, 4, axis=1).ravel()
    cols = np.tile(tets, (1, 4)).ravel()
    n = len(nodes)
    return sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(n, n))


def pushforward_conductivity(gamma, nodes, new_nodes, tets, tol=1e-12):
    """``DF gamma DF^T / det DF`` per tetrahedron for the piecewise-linear map nodes -> new_nodes."""
    _, E0, d0 = _tet_geometry(nodes, tets)
    _, E1, d1 = _tet_geometry(new_nodes, tets)
    DF = E1 @ np.linalg.inv(E0)
    det = np.linalg.det(DF)
    if np.any(det <= tol):
        raise DegenerateJacobian(f"map folds a tetrahedron (min det DF = {det.min():.3e})")
    return np.einsum("tij,tjk,tlk->til", DF, gamma, DF) / det[:, None, None]


def pushforward_at(gamma_fn, F, DF, x):
    """Pointwise ``F_* gamma`` at the image point ``F(x)`` for callables ``F, DF``."""
    J = DF(x)
    det = np.linalg.det(J)
    if np.any(det <= 0):
        raise DegenerateJacobian("map is not orientation preserving")
    return F(x), J @ gamma_fn(x) @ J.T / det


def bump_map(mesh, amplitude=0.15, radius=0.6, direction=(1.0, 0.5, 0.0)):
    """Boundary-fixing piecewise-linear deformation by a smooth radial bump."""
    x = mesh.nodes
    r = np.linalg.norm(x, axis=1) / radius
    bump = np.where(r < 1, np.exp(1 - 1 / np.maximum(1 - r**2, 1e-300)), 0.0)
    new = x + amplitude * bump[:, None] * np.asarray(direction)[None]
    new[mesh.boundary] = x[mesh.boundary]
    return new


def fem_dn(mesh, K):
    """Dense Schur complement of a P1 system onto the boundary nodes."""
    B = np.flatnonzero(mesh.boundary)
    I = np.flatnonzero(~mesh.boundary)
    K = K.tocsr()
    KII = K[I][:, I].tocsc()
    KIB = K[I][:, B].toarray()
    lu = spla.splu(KII)
    X = lu.solve(KIB)
    return K[B][:, B].toarray() - K[B][:, I] @ X


def gauge_check(n=12, amplitude=0.15, gamma_fn=None):
    """Relative gap between the DN maps of ``gamma`` and ``F_* gamma``."""
    mesh = kuhn_mesh(n)
    cent = mesh.nodes[mesh.tets].mean(axis=1)
    if gamma_fn is None:
        def gamma_fn(p):
            g = 1 + 0.3 * np.exp(-np.sum(p**2, -1) / 0.2)
            return g[:, None, None] * np.eye(3)[None]
    gamma = gamma_fn(cent)
    new = bump_map(mesh, amplitude)
    gamma2 = pushforward_conductivity(gamma, mesh.nodes, new, mesh.tets)
    L1 = fem_dn(mesh, p1_stiffness(mesh.nodes, mesh.tets, gamma))
    L2 = fem_dn(mesh, p1_stiffness(new, mesh.tets, gamma2))
    moved = float(np.max(np.linalg.norm(new - mesh.nodes, axis=1)))
    return float(np.linalg.norm(L1 - L2, 2) / np.linalg.norm(L1, 2)), moved
