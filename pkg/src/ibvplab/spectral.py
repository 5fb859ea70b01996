"""Dirichlet spectra and spectrally defined Sobolev norms.

Interior norms use the Dirichlet eigenbasis of ``-Laplacian_g0`` on the
masked disk grid; boundary norms use the eigenbasis of a weighted graph
Laplacian on the boundary node set of a 3-D mesh.
"""
from dataclasses import dataclass
import warnings

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverFailure, TruncationWarning

TAIL_FRACTION = 0.01


def dirichlet_stiffness(surface):
    """Symmetric 5-point stiffness matrix of the Euclidean Dirichlet form.

    Interior links carry weight 1; a link cut by the circle is replaced by a
    diagonal term ``h / arm`` where ``arm`` is the distance to the circle
    along the grid axis (Shortley-Weller style, symmetrised).
    In 2-D the conformal factor drops out of the Dirichlet form, so the
    metric enters only through the mass matrix.
    """
    inside = surface.inside
    idx = surface.node_index
    n = surface.grid_resolution
    h = surface.h
    ax = surface.axis
    I, J = np.nonzero(inside)
    N = len(I)
    diag = np.zeros(N)
    rows, cols = [], []
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        I2, J2 = I + di, J + dj
        inb = (I2 >= 0) & (I2 < n) & (J2 >= 0) & (J2 < n)
        ok = np.zeros(N, dtype=bool)
        ok[inb] = inside[I2[inb], J2[inb]]
        a = idx[I[ok], J[ok]]
        rows.append(a)
        cols.append(idx[I2[ok], J2[ok]])
        diag[a] += 1.0
        cut = ~ok
        x0, y0 = ax[I[cut]], ax[J[cut]]
        if di:
            arm = di * np.sqrt(np.maximum(1.0 - y0**2, 0.0)) - x0
            arm *= di
        else:
            arm = dj * np.sqrt(np.maximum(1.0 - x0**2, 0.0)) - y0
            arm *= dj
        arm = np.maximum(arm, 1e-3 * h)
        diag[idx[I[cut], J[cut]]] += h / arm
    r = np.concatenate(rows + [np.arange(N)])
    c = np.concatenate(cols + [np.arange(N)])
    v = np.concatenate([-np.ones(sum(len(x) for x in rows)), diag])
    return sp.csr_matrix((v, (r, c)), shape=(N, N))


def _start(n):
    # fixed Krylov start vector so ARPACK runs are reproducible
    return np.random.default_rng(0).standard_normal(n)


def mass_weights(surface):
    """Diagonal of the L2(dV_g0) mass matrix at interior nodes."""
    return surface.volume_weights


@dataclass(frozen=True)
class DirichletSpectrum:
    """Eigenpairs of ``-Laplacian_g0`` with Dirichlet data on the disk grid.

    ``eigenfields[:, k]`` is M-orthonormal, ``M = diag(mass)``.
    """

    eigenvalues: np.ndarray
    eigenfields: np.ndarray
    mass: np.ndarray
    grid_resolution: int
    tag: str = ""

    @property
    def count(self):
        return len(self.eigenvalues)

    def coefficients(self, f):
        f = np.asarray(f)
        return self.eigenfields.T @ (self.mass[:, None] * f if f.ndim == 2 else self.mass * f)

    def synthesize(self, c):
        return self.eigenfields @ c

    def l2_norm(self, f):
        f = np.asarray(f)
        return float(np.sqrt(np.sum(self.mass * np.abs(f) ** 2)))

    def orthonormality_error(self):
        G = self.eigenfields.T @ (self.mass[:, None] * self.eigenfields)
        return float(np.max(np.abs(G - np.eye(self.count))))


def dirichlet_eigs(surface, count=200, dense=None):
    """The ``count`` smallest Dirichlet eigenpairs of ``-Laplacian_g0``.

    Solved as the generalized problem ``A u = lambda M u`` with the symmetric
    stiffness ``A`` and lumped mass ``M``. ``dense=None`` picks a dense
    solver for small grids or when nearly all modes are requested.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    A = dirichlet_stiffness(surface)
    m = mass_weights(surface)
    N = A.shape[0]
    if count > N:
        raise ValueError(f"count={count} exceeds the {N} interior nodes")
    if dense is None:
        dense = N <= 2500 or count > N // 3
    if dense:
        # symmetric scaling keeps the dense problem standard
        s = 1.0 / np.sqrt(m)
        B = (A.toarray() * s[:, None]) * s[None, :]
        w, v = sla.eigh(B, subset_by_index=[0, count - 1])
        v = v * s[:, None]
    else:
        try:
            w, v = spla.eigsh(A.tocsc(), k=count, M=sp.diags(m).tocsc(), sigma=0.0, which="LM", v0=_start(A.shape[0]))
        except (spla.ArpackNoConvergence, spla.ArpackError) as exc:
            raise SolverFailure(f"eigsh did not converge: {exc}") from exc
        order = np.argsort(w)
        w, v = w[order], v[:, order]
        nrm = np.sqrt(np.sum(m[:, None] * v * v, axis=0))
        v = v / nrm
    # deterministic sign: largest-magnitude entry positive
    piv = np.argmax(np.abs(v), axis=0)
    v = v * np.sign(v[piv, np.arange(v.shape[1])])
    return DirichletSpectrum(w, v, m, surface.grid_resolution)


def discrete_residuals(surface, spectrum):
    """``||(A - lambda_k M) phi_k|| / lambda_k`` in the discrete L2 norm."""
    A = dirichlet_stiffness(surface)
    R = A @ spectrum.eigenfields - spectrum.mass[:, None] * spectrum.eigenfields * spectrum.eigenvalues
    R = R / spectrum.mass[:, None]
    return np.sqrt(np.sum(spectrum.mass[:, None] * R * R, axis=0)) / spectrum.eigenvalues


@dataclass(frozen=True)
class SobolevCoeffs:
    coeffs: np.ndarray
    order: float
    eigenvalues: np.ndarray

    def norm(self, order=None):
        s = self.order if order is None else order
        return float(np.sqrt(np.sum((1.0 + self.eigenvalues) ** s * np.abs(self.coeffs) ** 2)))


def sobolev_coeffs(f, s, spectrum):
    return SobolevCoeffs(spectrum.coefficients(f), float(s), spectrum.eigenvalues)


def _warn_truncation(total, captured, s):
    if s >= 0 and total > 0 and (total - captured) > TAIL_FRACTION * total:
        warnings.warn(
            f"spectral truncation misses {100 * (total - captured) / total:.1f}% of the L2 energy",
            TruncationWarning, stacklevel=3)


def sobolev_norm(f, s, spectrum):
    """``(sum_k (1+lambda_k)^s |<f, phi_k>|^2)^(1/2)`` over the stored basis."""
    f = np.asarray(f)
    c = spectrum.coefficients(f)
    _warn_truncation(spectrum.l2_norm(f) ** 2, float(np.sum(np.abs(c) ** 2)), s)
    return float(np.sqrt(np.sum((1.0 + spectrum.eigenvalues) ** s * np.abs(c) ** 2)))


def mixed_norm(F, s, spectrum, ds):
    """``L2(R; H^s(M0))`` norm of samples ``F[j]`` taken every ``ds`` along the axis."""
    F = np.asarray(F)
    C = spectrum.coefficients(F.T)  # (K, ns)
    wts = (1.0 + spectrum.eigenvalues) ** s
    return float(np.sqrt(ds * np.sum(wts[:, None] * np.abs(C) ** 2)))


def cylinder_sobolev_norm(F, s, spectrum, ds):
    """Tensor spectral ``H^s`` norm on the cylinder.

    ``F`` has shape ``(ns, N)`` with zero padding implied outside the sampled
    window; weights ``(1 + xi^2 + lambda_k)^s`` combine the axial Fourier
    variable with the transversal eigenvalues.
    """
    F = np.asarray(F)
    ns = F.shape[0]
    C = spectrum.coefficients(F.T).T  # (ns, K)
    pad = 2 * ns
    Ch = np.fft.fft(C, n=pad, axis=0) * ds
    xi = 2 * np.pi * np.fft.fftfreq(pad, d=ds)
    wts = (1.0 + xi[:, None] ** 2 + spectrum.eigenvalues[None, :]) ** s
    dxi = 2 * np.pi / (pad * ds)
    return float(np.sqrt(np.sum(wts * np.abs(Ch) ** 2) * dxi / (2 * np.pi)))


# ---------------------------------------------------------------------------
# boundary norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryBasis:
    """Eigenbasis of a weighted graph Laplacian on a boundary node set.

    ``area`` holds the nodal boundary area weights; modes are orthonormal in
    ``sum_i area_i u_i v_i``. The first mode is the constant.
    """

    eigenvalues: np.ndarray
    modes: np.ndarray
    area: np.ndarray

    @property
    def count(self):
        return len(self.eigenvalues)

    @property
    def total_area(self):
        return float(np.sum(self.area))

    def coefficients(self, trace):
        trace = np.asarray(trace)
        if trace.ndim == 2:
            return self.modes.T @ (self.area[:, None] * trace)
        return self.modes.T @ (self.area * trace)

    def l2_norm(self, trace):
        return float(np.sqrt(np.sum(self.area * np.abs(np.asarray(trace)) ** 2)))

    def weights(self, s):
        return (1.0 + np.maximum(self.eigenvalues, 0.0)) ** s


def boundary_laplacian(area, edges, lengths):
    """Graph Laplacian with edge weights ``mean(area) / length^2``.

    Each undirected edge appears once in ``edges``.
    """
    area = np.asarray(area, float)
    i, j = np.asarray(edges).T
    w = 0.5 * (area[i] + area[j]) / np.asarray(lengths, float) ** 2
    n = len(area)
    W = sp.coo_matrix((np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n)).tocsr()
    return sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W


def boundary_basis(area, edges, lengths, count=64, dense=None):
    L = boundary_laplacian(area, edges, lengths)
    area = np.asarray(area, float)
    n = len(area)
    count = min(count, n)
    if dense is None:
        dense = n <= 3000 or count > n // 3
    if dense:
        s = 1.0 / np.sqrt(area)
        B = (L.toarray() * s[:, None]) * s[None, :]
        w, v = sla.eigh(B, subset_by_index=[0, count - 1])
        v = v * s[:, None]
    else:
        try:
            w, v = spla.eigsh(L.tocsc(), k=count, M=sp.diags(area).tocsc(), sigma=-1e-3, which="LM",
                              v0=_start(L.shape[0]))
        except (spla.ArpackNoConvergence, spla.ArpackError) as exc:
            raise SolverFailure(f"boundary eigsh did not converge: {exc}") from exc
        order = np.argsort(w)
        w, v = w[order], v[:, order]
        v = v / np.sqrt(np.sum(area[:, None] * v * v, axis=0))
    piv = np.argmax(np.abs(v), axis=0)
    v = v * np.sign(v[piv, np.arange(v.shape[1])])
    w = np.where(np.abs(w) < 1e-10, 0.0, w)
    return BoundaryBasis(w, v, area)


def boundary_sobolev_norm(trace, s, basis):
    """Spectral ``H^s`` norm of a boundary trace in the given boundary basis."""
    trace = np.asarray(trace)
    c = basis.coefficients(trace)
    _warn_truncation(basis.l2_norm(trace) ** 2, float(np.sum(np.abs(c) ** 2)), s)
    return float(np.sqrt(np.sum(basis.weights(s) * np.abs(c) ** 2)))
