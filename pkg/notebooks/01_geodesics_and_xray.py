"""
Geodesics and the attenuated ray transform on a conformal disk
==============================================================

Trace a fan of geodesics, take the attenuated X-ray transform of a bump,
check the adjoint identity and look at the normal operator's singular values.
Run with ``python3 notebooks/01_geodesics_and_xray.py``; SVGs land in notebooks/out.
"""

# %%
from pathlib import Path

import numpy as np

from ibvplab import geometry, svg, xray

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

# metric exp(2 lam) (dx^2 + dy^2) with lam = 0.1 (1 - r^2)
surf = geometry.SimpleSurface.from_expression("0.1*(1-x^2-y^2)", 48)
print("diameter", surf.diameter)

# %% geodesics from one boundary point
series = []
for a in np.linspace(-1.3, 1.3, 9):
    p = geometry.trace_geodesic(surf, surf.boundary_point(np.pi), surf.inward_direction(np.pi, a), 1e-3)
    series.append((f"{a:.2f}", p.positions[:, 0], p.positions[:, 1], "line"))
    print(f"alpha {a:+.2f}  exit time {p.exit_time:.6f}  euclidean chord {2 * np.cos(a):.6f}")
th = np.linspace(0, 2 * np.pi, 200)
series.append(("boundary", np.cos(th), np.sin(th), "line"))
(out / "geodesics.svg").write_text(svg.line_plot(series, "geodesics from (-1, 0)", "x", "y"))

# %% sinogram of an off-centre bump, with and without attenuation
fan = geometry.build_fan(surf, 64, 64, 0.05)
f = lambda x, y: np.exp(-((x - 0.3) ** 2 + y**2) / 0.05)
for sigma in (0.0, 0.5):
    sino = xray.xray_apply(surf, f, sigma, fan)
    print(f"sigma {sigma}: max {np.abs(sino.values).max():.4f}")
    (out / f"sinogram_{sigma}.svg").write_text(
        svg.heatmap(sino.values.real.T, f"sinogram sigma={sigma}", "boundary angle", "direction"))

# %% adjoint identity: <I f, h>_mu = <f, I* h>
h = lambda p, a: 1 + 0.3 * np.cos(p) + 0.2 * np.sin(a)
for sigma in (0.0, 0.3):
    print(f"adjoint residual sigma={sigma}: {xray.adjoint_identity_check(surf, f, h, sigma, fan):.2e}")

# %% normal operator on the interior support: symmetric, positive, full rank
small = geometry.SimpleSurface.from_expression("0.1*(1-x^2-y^2)", 24)
nm = xray.normal_matrix(small, 0.0, xray.support_nodes(small), geometry.build_fan(small, 64, 64, 0.05))
sv = nm.singular_values
print(f"{len(sv)} unknowns, singular values {sv[0]:.3e} .. {sv[-1]:.3e}")
(out / "singular_values.svg").write_text(
    svg.line_plot([("sv", np.arange(1, len(sv) + 1), sv, "line")], "normal operator", "index", "value", logy=True))
