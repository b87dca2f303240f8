"""Batch command-line front end.

    surfhps solve    --set preset=sphere-Y43 --out run1
    surfhps converge --set preset=hemisphere-Y32 --set sweep=level:1:3
    surfhps evolve   --config spots.cfg --seed 7
    surfhps quadify  in.off out.off
    surfhps quality  mesh.off

Exit codes: 0 ok, 2 configuration or input error, 3 numerical failure.
"""

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import geometry as geo
from . import mesh as msh
from .hps import HpsError, HpsSolver
from .local import LocalError, PdeCoefficients
from .output import ensure_dir, write_csv, write_metadata, write_vtk
from .problems import (PRESETS, ConfigError, build_discretization, build_geometry,
                       config_dict, exact_harmonic, load_config_file, make_config,
                       make_kinetics, parse_pairs, snapshot_times)
from .timestep import BlowUpError, SimulationConfig, run_evolving, run_simulation

log = logging.getLogger("surfhps")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def _config(args):
    file_values = load_config_file(args.config) if args.config else {}
    overrides = parse_pairs(args.set or [])
    if args.out:
        overrides["out"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    return make_config(file_values, overrides, getattr(args, "preset", None))


def _elliptic_problem(cfg, disc):
    if not cfg.solution:
        raise ConfigError("solve needs an exact solution (solution=Y:l:m) or a preset that names one")
    if cfg.geometry not in ("sphere", "hemisphere"):
        raise ConfigError("harmonic exact solutions are defined on the sphere and hemisphere only")
    u_exact, lam = exact_harmonic(cfg, disc.coords)
    coeffs = PdeCoefficients.helmholtz(1.0, cfg.shift)
    return coeffs, u_exact, (lam + cfg.shift) * u_exact


def _solve_once(cfg, disc):
    coeffs, u_exact, f = _elliptic_problem(cfg, disc)
    t0 = time.perf_counter()
    solver = HpsSolver(disc, coeffs, threads=cfg.threads)
    t1 = time.perf_counter()
    u = solver.solve(f, u_exact if disc.dofs.dirichlet.any() else None)
    t2 = time.perf_counter()
    return u, u_exact, float(np.abs(u - u_exact).max()), t1 - t0, t2 - t1


def _mesh_size(disc):
    m = disc.mesh
    k = m.elements.shape[1]
    P = m.vertices[m.elements]
    return float(max(np.linalg.norm(P[:, e] - P[:, (e + 1) % k], axis=1).max() for e in range(k)))


def cmd_solve(cfg):
    out = ensure_dir(cfg.out)
    mesh, projector, _, prov = build_geometry(cfg)
    disc = build_discretization(cfg, mesh, projector)
    u, u_exact, err, tb, ts = _solve_once(cfg, disc)
    write_vtk(os.path.join(out, "solution.vtk"), disc, {"u": u, "u_exact": u_exact, "error": u - u_exact})
    write_csv(os.path.join(out, "error.csv"), ["n", "h", "dofs", "linf_error"],
              [[cfg.n, _mesh_size(disc), disc.n_nodes, err]])
    write_csv(os.path.join(out, "timings.csv"), ["n", "build_time", "solve_time"], [[cfg.n, tb, ts]])
    write_metadata(os.path.join(out, "metadata.json"), config_dict(cfg),
                   {"mesh": prov, "elements": mesh.n_elements, "linf_error": err})
    print(f"L_inf error {err:.6e}  (n={cfg.n}, K={mesh.n_elements}, dofs={disc.n_nodes})")
    return EXIT_OK


def _parse_sweep(spec):
    try:
        parts = spec.split(":")
        var, lo, hi = parts[0], int(parts[1]), int(parts[2])
        step = int(parts[3]) if len(parts) > 3 else 1
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"sweep must look like n:4:16[:step] or level:1:3, got {spec!r}") from exc
    if var not in ("n", "level") or hi < lo or step < 1:
        raise ConfigError(f"invalid sweep {spec!r}")
    return var, list(range(lo, hi + 1, step))


def fit_rate(var, xs, errors):
    """rho for n-sweeps (error ~ rho^-n) or order p for h-sweeps (error ~ h^p)."""
    if len(xs) < 2:
        return None
    x = np.asarray(xs, dtype=float)
    y = np.log(np.asarray(errors, dtype=float))
    if var == "n":
        slope = np.polyfit(x, y, 1)[0]
        return float(np.exp(-slope))
    return float(np.polyfit(np.log(x), y, 1)[0])


def cmd_converge(cfg):
    if not cfg.sweep:
        raise ConfigError("converge needs sweep=n:LO:HI or sweep=level:LO:HI")
    var, values = _parse_sweep(cfg.sweep)
    out = ensure_dir(cfg.out)
    rows = []
    for v in values:
        c = make_config(config_dict(cfg), {"n": v} if var == "n" else {"mesh_level": v})
        mesh, projector, _, _ = build_geometry(c)
        disc = build_discretization(c, mesh, projector)
        _, _, err, tb, ts = _solve_once(c, disc)
        h = _mesh_size(disc)
        rows.append([v, h, disc.n_nodes, err, tb, ts])
        print(f"{var}={v:3d}  h={h:.4f}  dofs={disc.n_nodes:7d}  err={err:.3e}  build={tb:.2f}s")
    xs = [r[0] for r in rows] if var == "n" else [r[1] for r in rows]
    rate = fit_rate(var, xs, [r[3] for r in rows])
    # wall-clock times go to their own file so the results stay bit-reproducible
    write_csv(os.path.join(out, "convergence.csv"), [var, "h", "dofs", "linf_error"],
              [r[:4] for r in rows])
    write_csv(os.path.join(out, "timings.csv"), [var, "build_time", "solve_time"],
              [[r[0], r[4], r[5]] for r in rows])
    write_metadata(os.path.join(out, "metadata.json"), config_dict(cfg),
                   {"sweep": var, "rate_kind": "rho" if var == "n" else "order", "rate": rate})
    label = "rho" if var == "n" else "order"
    print(f"fitted {label}: {'' if rate is None else f'{rate:.3f}'}")
    return EXIT_OK


def _initial(cfg, disc, kin):
    if cfg.initial in ("random", "equilibrium"):
        return cfg.initial
    y, lam = exact_harmonic(cfg, disc.coords)
    rate = lam * cfg.diffusion
    if cfg.start == "exact":
        return [[y * np.exp(rate * k * cfg.dt) for k in range(cfg.scheme)]
                for _ in range(kin.species)]
    return [y.copy() for _ in range(kin.species)]


def cmd_evolve(cfg):
    out = ensure_dir(cfg.out)
    mesh, projector, law, prov = build_geometry(cfg)
    disc = build_discretization(cfg, mesh, projector)
    kin = make_kinetics(cfg)
    sim = SimulationConfig(disc, kin, order=cfg.scheme, dt=cfg.dt, T=cfg.T,
                           snapshot_times=snapshot_times(cfg), initial=_initial(cfg, disc, kin),
                           seed=cfg.seed, threads=cfg.threads, law=law,
                           rebuild_every=cfg.rebuild_every)
    traj = run_evolving(sim) if law is not None else run_simulation(sim)
    rows = []
    for k, snap in enumerate(traj.snapshots):
        fields = dict(zip(kin.names, snap.values))
        extra = []
        if cfg.kinetics == "none" and cfg.initial.startswith("Y:"):
            y, lam = exact_harmonic(cfg, disc.coords)
            exact = y * np.exp(-lam * cfg.diffusion * snap.t)
            extra = [float(np.abs(snap.values[0] - exact).max())]
        write_vtk(os.path.join(out, f"snapshot_{k:04d}.vtk"), disc, fields, coords=snap.coords,
                  title=f"t={snap.t:g}")
        for name, st in zip(kin.names, snap.stats):
            rows.append([snap.t, snap.step, name, st["min"], st["max"], st["mean"], st["std"],
                         snap.area] + extra)
    header = ["t", "step", "species", "min", "max", "mean", "std", "area"]
    if cfg.kinetics == "none" and cfg.initial.startswith("Y:"):
        header.append("linf_error")
    write_csv(os.path.join(out, "stats.csv"), header, rows)
    write_metadata(os.path.join(out, "metadata.json"), config_dict(cfg),
                   {"mesh": prov, "elements": mesh.n_elements, "snapshots": len(traj.snapshots),
                    "hps_builds": traj.builds, "geometry_rebuilds": traj.geometry_rebuilds,
                    "species": list(kin.names)})
    print(f"{len(traj.snapshots)} snapshots to t={traj.final.t:g}; "
          f"{traj.builds} HPS builds, {traj.geometry_rebuilds} geometry rebuilds")
    return EXIT_OK


def cmd_quadify(src, dst):
    mesh = msh.load_off(src)
    quads = msh.rhombus_quadrilateralize(mesh)
    msh.save_off(quads, dst)
    print(f"{mesh.n_elements} triangles -> {quads.n_elements} quads")
    return EXIT_OK


def cmd_quality(path):
    mesh = msh.load_off(path)
    q = msh.mesh_quality(mesh)
    print(f"elements={mesh.n_elements} h={q.h:.6g} r={q.r:.6g} h/r={q.ratio:.6g} "
          f"min_angle={q.worst_angle:.4g} flagged={len(q.flagged)}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="surfhps", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", metavar="PATH", help="flat key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override (repeatable)")
        sp.add_argument("--preset", choices=sorted(PRESETS))
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)

    for name in ("solve", "converge", "evolve"):
        common(sub.add_parser(name))
    q = sub.add_parser("quadify", help="rhombus quadrilateralization of a closed OFF mesh")
    q.add_argument("mesh_in")
    q.add_argument("mesh_out")
    ql = sub.add_parser("quality", help="mesh quality report")
    ql.add_argument("mesh")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "quadify":
            return cmd_quadify(args.mesh_in, args.mesh_out)
        if args.command == "quality":
            return cmd_quality(args.mesh)
        cfg = _config(args)
        return {"solve": cmd_solve, "converge": cmd_converge, "evolve": cmd_evolve}[args.command](cfg)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, msh.MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (BlowUpError, HpsError, LocalError, geo.GeometryError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
