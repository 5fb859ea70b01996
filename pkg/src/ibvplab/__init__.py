"""Numerical laboratory for stable recovery of potentials and conformal factors
from boundary measurements on conformally transversally anisotropic cylinders."""
from . import errors
from .errors import AdmissibilityError, IbvpError, SolverError
from .geometry import SimpleSurface, build_fan, load_surface, surface_from_spec, trace_geodesic
from .spectral import dirichlet_eigs, sobolev_norm
from .xray import normal_invert, normal_matrix, xray_adjoint, xray_apply
from .cgo import CylinderGrid, build_cgo
from .boundary import ConformalFactor, DomainGrid, Potential, cauchy_dist, dn_map, forward_solve
from .stability import final_bound, poisson_majorant, theorem_sweep

__version__ = "0.1.0"

__all__ = [
    "errors", "AdmissibilityError", "IbvpError", "SolverError",
    "SimpleSurface", "build_fan", "load_surface", "surface_from_spec", "trace_geodesic",
    "dirichlet_eigs", "sobolev_norm",
    "normal_invert", "normal_matrix", "xray_adjoint", "xray_apply",
    "CylinderGrid", "build_cgo",
    "ConformalFactor", "DomainGrid", "Potential", "cauchy_dist", "dn_map", "forward_solve",
    "final_bound", "poisson_majorant", "theorem_sweep",
]
