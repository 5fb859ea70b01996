"""Batch command-line front end.

    ibvplab SUBCOMMAND [--config PATH] [--out DIR] [--plots] [--threads N] [--seed U64]

Every subcommand reads an optional JSON config (missing keys take the
defaults below), writes CSV/JSON/SVG/binary artifacts to ``--out`` plus a
``manifest.json`` echoing the configuration, and exits with 0 on success,
2 on an admissibility rejection and 1 on a solver failure.
"""
import argparse
import json
import os
import sys
from pathlib import Path

SUBCOMMANDS = ("geodesic", "eigs", "sinogram", "normal-op", "cgo-check", "forward", "dn-map", "dist",
               "identity-check", "low-freq", "poisson", "sweep", "calderon-sweep")

SURFACE = {"lambda": "0.1*(1-x^2-y^2)", "grid_resolution": 32}
BUMP = "exp(-((x+0.1)^2+y^2)/0.02-s^2/0.05)"
DOMAIN = {"kind": "cylinder", "S": 1.0, "R": 0.6, "n_s": 25, "n_x": 25}

DEFAULTS = {
    "geodesic": {"surface": SURFACE, "phi": 0.0, "alpha": [-1.0, -0.5, 0.0, 0.5, 1.0], "step": 1e-3},
    "eigs": {"surface": SURFACE, "count": 50},
    "sinogram": {"surface": SURFACE, "fan": {"n_omega": 32, "n_dir": 32, "delta_fan": 0.05}, "sigma": 0.3,
                 "f": "exp(-(x^2+y^2)/0.1)"},
    "normal-op": {"surface": {"lambda": "0", "grid_resolution": 24},
                  "fan": {"n_omega": 48, "n_dir": 48, "delta_fan": 0.05}, "sigma": 0.0,
                  "support_radius": 0.6, "sigma_list": [-0.5, 0.0, 0.5]},
    "cgo-check": {"surface": SURFACE, "tau": 8.0, "sigma": 0.0, "sign": 1, "q": None, "omega_phi": 3.141592653589793,
                  "ds": 0.03125, "count": None, "mode": "discrete"},
    "forward": {"domain": DOMAIN, "q": None, "trace": "1+x"},
    "dn-map": {"domain": DOMAIN, "q": None, "modes": 64},
    "dist": {"domain": DOMAIN, "q1": {"expression": BUMP}, "q2": {"expression": BUMP}, "modes": 64},
    "identity-check": {"surface": {"lambda": "0.1*(1-x^2-y^2)", "grid_resolution": 64},
                       "domain": dict(DOMAIN, n_s=33, n_x=33),
                       "tau": 16.0, "sigma": 0.0, "placements": 5, "amplitude": 3.0, "ds": 0.015625},
    "low-freq": {"surface": SURFACE, "domain": DOMAIN, "fan": {"n_omega": 48, "n_dir": 48, "delta_fan": 0.05},
                 "bump": BUMP, "amplitudes": [0.5, 1.0, 2.0], "delta0_list": [0.1, 0.3], "K": 5.0, "count": 100},
    "poisson": {"b": 1.0, "delta": 1.0, "x": [-2.0, -1.0, 0.0, 1.0, 2.0], "y": [0.25, 0.5, 1.0, 2.0]},
    "sweep": {"surface": SURFACE, "domain": DOMAIN, "bump": BUMP, "eps_list": [1e-4, 1e-8, 1e-12],
              "t_measured": [], "lambda": 0.25, "K": 1.0, "delta0": 0.3, "count": 100, "ds": 0.03125},
    "calderon-sweep": {"surface": SURFACE, "domain": DOMAIN, "c1": "exp(4*{a}*exp(-(x^2+y^2+s^2)/0.08))",
                       "c2": "1+0*x", "amplitudes": [0.025, 0.05, 0.1], "count": 100, "ds": 0.03125},
}


class ConfigError(Exception):
    pass


def _merge(base, over):
    out = dict(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(sub, path):
    cfg = json.loads(json.dumps(DEFAULTS[sub]))
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        unknown = set(user) - set(cfg) - {"surface_path"}
        if unknown:
            raise ConfigError(f"unknown config keys for {sub}: {sorted(unknown)}")
        cfg = _merge(cfg, user)
    return cfg


# ---------------------------------------------------------------------------
# subcommand bodies: each returns (summary dict, list of written files)
# ---------------------------------------------------------------------------

class Run:
    def __init__(self, sub, cfg, out, plots, seed):
        from . import io
        self.io = io
        self.sub, self.cfg, self.out, self.plots, self.seed = sub, cfg, Path(out), plots, seed
        self.hash = io.config_hash({"subcommand": sub, "config": cfg, "seed": seed})
        self.files = []

    def csv(self, name, header, rows):
        header = list(header) + ["config_hash"]
        rows = [list(r) + [self.hash] for r in rows]
        self.io.write_csv(self.out / name, header, rows)
        self.files.append(name)

    def json(self, name, obj):
        self.io.write_json(self.out / name, {"config_hash": self.hash, **obj})
        self.files.append(name)

    def svg(self, name, text):
        if self.plots:
            (self.out / name).write_text(text)
            self.files.append(name)

    def binary(self, name, writer, *args):
        writer(self.out / name, *args)
        self.files.append(name)

    def surface(self):
        from . import geometry
        if "surface_path" in self.cfg:
            return geometry.load_surface(self.cfg["surface_path"])
        return geometry.surface_from_spec(self.cfg["surface"])

    def domain(self, surface=None):
        from . import boundary
        d = self.cfg["domain"]
        lam = surface.lam if surface is not None else None
        return boundary.DomainGrid(d["kind"], d["S"], d["R"], int(d["n_s"]), int(d["n_x"]), lam=lam)

    def fan(self, surface):
        from . import geometry
        f = self.cfg["fan"]
        return geometry.build_fan(surface, int(f["n_omega"]), int(f["n_dir"]), float(f["delta_fan"]))

    def potential(self, spec):
        from . import boundary
        if spec is None:
            return None
        if isinstance(spec, str):
            return boundary.Potential.from_expression(spec)
        return boundary.potential_from_spec(spec)


def _geodesic(r):
    from . import geometry
    import numpy as np
    surf = r.surface()
    rows, series = [], []
    for a in r.cfg["alpha"]:
        start = surf.boundary_point(r.cfg["phi"])
        d = surf.inward_direction(r.cfg["phi"], a)
        path = geometry.trace_geodesic(surf, start, d, r.cfg["step"])
        rows.append((r.cfg["phi"], a, path.exit_time, path.positions[-1, 0], path.positions[-1, 1],
                     path.speed_error(surf)))
        series.append((f"alpha={a}", path.positions[:, 0], path.positions[:, 1], "line"))
    r.csv("geodesics.csv", ("phi", "alpha", "exit_time", "exit_x", "exit_y", "speed_error"), rows)
    from . import svg
    th = np.linspace(0, 2 * np.pi, 200)
    series.append(("boundary", np.cos(th), np.sin(th), "line"))
    r.svg("geodesics.svg", svg.line_plot(series, "geodesics", "x", "y", desc=r.hash))
    return {"rays": len(rows)}


def _eigs(r):
    from . import spectral
    surf = r.surface()
    sp_ = spectral.dirichlet_eigs(surf, int(r.cfg["count"]))
    res = spectral.discrete_residuals(surf, sp_)
    r.csv("eigenvalues.csv", ("k", "eigenvalue", "residual"),
          [(k, float(v), float(e)) for k, (v, e) in enumerate(zip(sp_.eigenvalues, res))])
    r.binary("spectrum.bin", r.io.write_spectrum, sp_, surf)
    return {"count": sp_.count, "orthonormality_error": sp_.orthonormality_error(),
            "lambda_1": float(sp_.eigenvalues[0])}


def _sinogram(r):
    from . import expr, xray, svg
    surf = r.surface()
    fan = r.fan(surf)
    f = expr.compile_expression(r.cfg["f"])
    sino = xray.xray_apply(surf, f, float(r.cfg["sigma"]), fan)
    r.csv("sinogram.csv", r.io.SINOGRAM_HEADER, r.io.sinogram_rows(sino, surf))
    r.svg("sinogram.svg", svg.heatmap(sino.values.real.T, "sinogram", "boundary angle", "direction", desc=r.hash))
    return {"max": float(abs(sino.values).max())}


def _normal_op(r):
    from . import xray, svg
    surf = r.surface()
    fan = r.fan(surf)
    sup = xray.support_nodes(surf, float(r.cfg["support_radius"]))
    nm = xray.normal_matrix(surf, float(r.cfg["sigma"]), sup, fan)
    r.binary("normal_matrix.bin", r.io.write_normal_matrix, nm)
    r.csv("singular_values.csv", ("index", "singular_value"), list(enumerate(nm.singular_values)))
    prof = xray.injectivity_profile(surf, r.cfg["sigma_list"], sup, fan)
    r.csv("injectivity_profile.csv", ("sigma", "smallest_singular_value"), prof)
    r.svg("singular_values.svg", svg.line_plot([("sv", range(1, len(nm.singular_values) + 1), nm.singular_values,
                                                 "line")], "singular values", "index", "value", logy=True,
                                               desc=r.hash))
    sym = float(abs(nm.entries - nm.entries.T).max() / abs(nm.entries).max())
    return {"support_nodes": len(sup), "smallest_singular_value": nm.smallest_singular_value,
            "rank_deficient": nm.rank_deficient, "symmetry": sym}


def _cylinder(r, surf):
    from . import cgo
    return cgo.CylinderGrid(surf, ds=float(r.cfg["ds"]))


def _spectrum(r, surf, count=None):
    from . import spectral
    N = surf.nodes.shape[0]
    count = count if count is not None else r.cfg.get("count")
    return spectral.dirichlet_eigs(surf, N - 1 if count is None else int(count))


def _cgo_check(r):
    from . import cgo
    surf = r.surface()
    spec = _spectrum(r, surf)
    grid = _cylinder(r, surf)
    omega = surf.boundary_point(float(r.cfg["omega_phi"]))
    q = r.potential(r.cfg["q"])
    cg = cgo.build_cgo(grid, spec, surf, omega, float(r.cfg["tau"]), float(r.cfg["sigma"]), q,
                       int(r.cfg["sign"]), mode=r.cfg["mode"])
    l2, h1 = cgo.remainder_norms(cg)
    r.binary("cgo.bin", r.io.write_cgo, cg)
    return {"tau": cg.tau, "tau_nudge": cg.tau_nudge, "residual": cg.residual_report, "remainder_l2": l2,
            "remainder_h1": h1, "iterations": cg.norms.iterations, "contraction": cg.norms.contraction}


def _forward(r):
    from . import boundary, expr
    grid = r.domain()
    q = r.potential(r.cfg["q"])
    f = expr.compile_expression(r.cfg["trace"], ("s", "x", "y"))
    u = boundary.forward_solve(grid, q, f)
    r.csv("solution.csv", ("s", "x", "y", "u"), [(*c, v) for c, v in zip(grid.coords, u)])
    return {"nodes": grid.n_nodes, "max_abs": float(abs(u).max())}


def _dn_map(r):
    from . import boundary
    grid = r.domain()
    dn = boundary.dn_map(grid, r.potential(r.cfg["q"]), count=int(r.cfg["modes"]))
    r.binary("dn_map.bin", r.io.write_dn_map, dn)
    return {"mesh_hash": grid.hash, "symmetry_error": dn.symmetry_error(), "modes": dn.matrix.shape[0]}


def _dist(r):
    from . import boundary
    grid = r.domain()
    m = int(r.cfg["modes"])
    d1 = boundary.dn_map(grid, r.potential(r.cfg["q1"]), count=m)
    d2 = boundary.dn_map(grid, r.potential(r.cfg["q2"]), count=m)
    cd = boundary.cauchy_dist(d1, d2)
    return {"epsilon": cd.epsilon, "method": cd.method}


def _identity_check(r):
    import numpy as np
    from . import boundary, cgo, stability
    surf = r.surface()
    spec = _spectrum(r, surf, None)
    grid = _cylinder(r, surf)
    dg = r.domain(surf)
    omega = np.array([-1.0, 0.0])
    dist = cgo.polar_nodes(surf, omega)
    tau, sig = float(r.cfg["tau"]), float(r.cfg["sigma"])
    v2 = cgo.build_cgo(grid, spec, surf, omega, tau, sig, None, sign=1, mode="discrete", dist=dist)
    dn0 = boundary.dn_map(dg)
    rng = np.random.default_rng(r.seed)
    rows = []
    for k in range(int(r.cfg["placements"])):
        q1 = placement_bump(rng, float(r.cfg["amplitude"]))
        v1 = cgo.build_cgo(grid, spec, surf, omega, tau, sig, q1, sign=-1, mode="discrete", dist=dist)
        eps = boundary.cauchy_dist(dn0, boundary.dn_map(dg, q1)).epsilon
        rep = stability.integral_identity_check(q1, boundary.Potential.zero(), v1, v2, eps)
        rows.append((k, eps, abs(rep.lhs), rep.rhs, rep.ratio, v1.residual_report["relative"]))
    r.csv("identity.csv", ("placement", "epsilon", "lhs", "rhs", "ratio", "cgo_residual"), rows)
    ratios = [x[4] for x in rows]
    return {"c_fit": max(ratios), "spread": max(ratios) / min(ratios)}


def placement_bump(rng, amplitude=3.0):
    """Narrow bump placed at random along the central ray from (-1, 0)."""
    from . import boundary
    cx = -0.25 + 0.3 * rng.uniform(-1, 1)
    cy = 0.1 * rng.uniform(-1, 1)
    cs = 0.3 * rng.uniform(-1, 1)
    return boundary.Potential.from_expression(
        f"{amplitude}*exp(-((x-({cx!r}))^2+(y-({cy!r}))^2)/0.01-(s-({cs!r}))^2/0.02)")


def _low_freq(r):
    from . import boundary, spectral, stability
    surf = r.surface()
    spec = spectral.dirichlet_eigs(surf, int(r.cfg["count"]))
    fan = r.fan(surf)
    dg = r.domain(surf)
    dn0 = boundary.dn_map(dg)
    k = stability.rate_k(dg.S, surf.diameter)
    rows, fits = [], {}
    for d0 in r.cfg["delta0_list"]:
        per = []
        for a in r.cfg["amplitudes"]:
            q = boundary.Potential.from_expression(f"{a}*({r.cfg['bump']})")
            eps = boundary.cauchy_dist(dn0, boundary.dn_map(dg, q)).epsilon
            recs, c, tau = stability.low_freq_bound(q, eps, float(d0), surf, spec, fan, k, float(r.cfg["K"]))
            per.append(c)
            rows += [(d0, a, eps, tau, x.sigma, x.normal_hm2, x.slice_hm3, x.recovered_hm3, x.data_size)
                     for x in recs]
        fits[str(d0)] = {"c_fit": max(per), "amplitude_spread": max(per) / min(per)}
    r.csv("low_freq.csv", ("delta0", "amplitude", "epsilon", "tau", "sigma", "normal_hm2", "slice_hm3",
                           "recovered_hm3", "data_size"), rows)
    return {"fits": fits}


def _poisson(r):
    from . import stability
    b, d = float(r.cfg["b"]), float(r.cfg["delta"])
    rows = []
    for x in r.cfg["x"]:
        for y in r.cfg["y"]:
            m = float(stability.poisson_majorant(b, d, x, y))
            qd = -b * stability.poisson_harmonic_quadrature(d, x, y)
            rows.append((x, y, m, qd, abs(m - qd)))
    r.csv("poisson.csv", ("x", "y", "majorant", "quadrature", "abs_diff"), rows)
    return {"value_at_0_1": float(stability.poisson_majorant(b, d, 0.0, 1.0)),
            "max_abs_diff": max(x[4] for x in rows)}


def _sweep(r):
    import numpy as np
    from . import boundary, svg, stability
    surf = r.surface()
    spec = _spectrum(r, surf)
    cyl = _cylinder(r, surf)
    dg = r.domain(surf)
    bump = boundary.Potential.from_expression(r.cfg["bump"])
    recs, c_fit, ok = stability.theorem_sweep(bump, r.cfg["eps_list"], r.cfg["t_measured"], dg, cyl, spec,
                                              float(r.cfg["lambda"]), float(r.cfg["K"]), dg.S, surf.diameter,
                                              float(r.cfg["delta0"]))
    r.csv("stability_records.csv", stability.CSV_FIELDS, [[getattr(x, f) for f in stability.CSV_FIELDS]
                                                          for x in recs])
    eps = np.array([x.epsilon for x in recs])
    order = np.argsort(eps)
    r.svg("stability_loglog.svg", svg.line_plot(
        [("lhs", eps[order], [recs[i].lhs_norm for i in order], "marker"),
         ("C_fit * modulus", eps[order], [c_fit * recs[i].rhs_bound for i in order], "line")],
        "stability sweep", "epsilon", "norm", logx=True, logy=True, desc=r.hash))
    slope = stability.modulus_slope(eps) if len(eps) > 1 else float("nan")
    return {"c_fit": c_fit, "all_bounded": ok, "records": len(recs), "modulus_slope": slope}


def _calderon_sweep(r):
    from . import boundary, stability
    surf = r.surface()
    spec = _spectrum(r, surf)
    cyl = _cylinder(r, surf)
    dg = r.domain(surf)
    rows = []
    out = {}
    for a in r.cfg["amplitudes"]:
        c1 = boundary.ConformalFactor.from_expression(r.cfg["c1"].replace("{a}", repr(float(a))))
        c2 = boundary.ConformalFactor.from_expression(r.cfg["c2"])
        ch = stability.calderon_postprocess(c1, c2, dg, cyl, spec)
        rows.append((a, ch.q_hm1, ch.q_l2_hm1, ch.q_l2_hm3, ch.interpolation_rhs, ch.elliptic_error, ch.w_h1,
                     ch.w_sup, ch.embedding_rhs, ch.c_sup_bound, all(ch.links.values())))
        out[str(a)] = ch.links
    r.csv("calderon_chain.csv", ("amplitude", "q_hm1", "q_l2_hm1", "q_l2_hm3", "interpolation_rhs",
                                 "elliptic_error", "w_h1", "w_sup", "embedding_rhs", "c_sup_bound", "links_ok"),
          rows)
    if len(rows) > 1:
        import numpy as np
        x = np.log([row[3] for row in rows])
        y = np.log([row[7] for row in rows])
        out["fitted_exponent"] = float(np.polyfit(x, y, 1)[0])
    return out


HANDLERS = {"geodesic": _geodesic, "eigs": _eigs, "sinogram": _sinogram, "normal-op": _normal_op,
            "cgo-check": _cgo_check, "forward": _forward, "dn-map": _dn_map, "dist": _dist,
            "identity-check": _identity_check, "low-freq": _low_freq, "poisson": _poisson, "sweep": _sweep,
            "calderon-sweep": _calderon_sweep}


def build_parser():
    p = argparse.ArgumentParser(prog="ibvplab", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", default=None, help="JSON configuration file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--plots", action="store_true", help="also write SVG plots")
    p.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread count")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized probes (u64)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    if not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    from .errors import AdmissibilityError, SolverError
    try:
        cfg = load_config(args.subcommand, args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    Path(args.out).mkdir(parents=True, exist_ok=True)
    run = Run(args.subcommand, cfg, args.out, args.plots, args.seed)
    try:
        summary = HANDLERS[args.subcommand](run)
    except AdmissibilityError as exc:
        print(f"rejected ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1
    run.json("result.json", {"subcommand": args.subcommand, **summary})
    manifest = {"subcommand": args.subcommand, "config": cfg, "seed": args.seed,
                "artifacts": {f: run.io.file_hash(Path(args.out) / f) for f in run.files}}
    run.io.write_json(Path(args.out) / "manifest.json", {"config_hash": run.hash, **manifest})
    return 0


if __name__ == "__main__":
    sys.exit(main())
