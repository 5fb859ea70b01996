"""
Boundary data and the stability sweep
=====================================

Synthesize DN maps on a cylinder, measure the Cauchy distance for a family
of potentials, and compare ||q1 - q2|| against the logarithmic modulus.
"""

# %%
from pathlib import Path

import numpy as np

from ibvplab import boundary, cgo, geometry, spectral, stability, svg

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

surf = geometry.SimpleSurface.from_expression("0.1*(1-x^2-y^2)", 32)
dg = boundary.DomainGrid("cylinder", 1.0, 0.6, 25, 25, lam=surf.lam)
bump = boundary.Potential.from_expression("exp(-((x+0.1)^2+y^2)/0.02-s^2/0.05)")

# %% DN maps and distances
dn0 = boundary.dn_map(dg)
print("DN symmetry error", dn0.symmetry_error())
for t in (0.25, 0.5, 1.0, 2.0):
    eps = boundary.cauchy_dist(dn0, boundary.dn_map(dg, bump.scaled(t))).epsilon
    print(f"t {t:4.2f}  epsilon {eps:.4e}  epsilon/t {eps / t:.4e}")

# %% theorem-level sweep with measured and injected epsilon
spec = spectral.dirichlet_eigs(surf, 100)
grid = cgo.CylinderGrid(surf, ds=1 / 32)
eps_list = list(10.0 ** -np.arange(4, 21, 2))
recs, c_fit, ok = stability.theorem_sweep(bump, eps_list, [0.5, 1.0, 2.0], dg, grid, spec, R=surf.diameter)
print("C_fit", c_fit, "all bounded", ok)
for r in recs:
    print(f"{r.source:9s} eps {r.epsilon:.2e}  lhs {r.lhs_norm:.3e}  C*modulus {c_fit * r.rhs_bound:.3e}")
e = np.array([r.epsilon for r in recs])
o = np.argsort(e)
(out / "stability.svg").write_text(svg.line_plot(
    [("lhs", e[o], [recs[i].lhs_norm for i in o], "marker"),
     ("C_fit * modulus", e[o], [c_fit * recs[i].rhs_bound for i in o], "line")],
    "stability sweep", "epsilon", "norm", logx=True, logy=True))

# %% the subharmonic majorant at unit height
print("majorant at (0, 1)", stability.poisson_majorant(1.0, 1.0, 0.0, 1.0))
