"""Command-line entry points.

Subcommands: `geometry check`, `fiber flatten|normalize|classify`, `solve`,
`family`, `mirror solve|extract|verify`, `calibrate`, and `run` (the full
pipeline driven by a config file, with a hashed artifact manifest).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import adiabatic, calibrate, hym_solver, mirror_lagrangian, serialize
from .config import RunConfig, dump_config, load_config
from .errors import SemiflatError
from .geometry import epsilon_structure, metric_from_potential


def _ensure_out(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_cfg(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return RunConfig().validate()


def cmd_geometry_check(args):
    cfg = _load_cfg(args)
    geom = metric_from_potential(cfg.geometry.build_potential(),
                                 cfg.geometry.resolution,
                                 periods=cfg.geometry.periods,
                                 cy_tol=cfg.geometry.cy_tol)
    out = _ensure_out(args.out)
    serialize.write_report(out / "geometry.txt", {"geometry": geom.summary()})
    print(f"calabi_yau = {geom.calabi_yau}")
    print(f"det_g_max_deviation = {geom.summary()['det_g_max_deviation']:.3e}")
    return 0


def cmd_fiber(args):
    from . import fiber_gauge as fg

    conn = serialize.load_fiber_connection(args.infile)
    cfg = _load_cfg(args)
    th = cfg.thresholds
    if args.fiber_op == "flatten":
        res = fg.flatten_to_t(conn, flatten_energy_max=th.flatten_energy_max,
                              newton_tol=th.newton_tol,
                              max_iters=th.newton_max_iters,
                              eig_tol=th.eig_tol, moduli_tol=th.moduli_tol)
        print(f"class = {res.point.a!r}")
        print(f"residual = {res.residual:.3e}")
        print(f"singular = {res.point.singular}")
    elif args.fiber_op == "normalize":
        res = fg.flatten_to_t(conn, flatten_energy_max=th.flatten_energy_max,
                              newton_tol=th.newton_tol,
                              max_iters=th.newton_max_iters,
                              eig_tol=th.eig_tol, moduli_tol=th.moduli_tol)
        _, ratio, dist = fg.unitary_normalize(conn, res, delta0=th.delta0)
        print(f"class = {res.point.a!r}")
        print(f"distance = {dist:.6e}")
        print(f"ratio = {ratio:.6f} (calibrated bound {th.unitary_ratio})")
    else:
        c = fg.semistability_classify(conn, eig_tol=th.eig_tol,
                                      moduli_tol=th.moduli_tol)
        print(f"kind = {c.kind}")
        if c.point is not None:
            print(f"class = {c.point.a!r}")
        if c.s_class is not None:
            print(f"s_class = {c.s_class.a!r}")
        print(f"confidence = {c.confidence:.3f}")
    return 0


def cmd_solve(args):
    cfg = _load_cfg(args)
    rng = np.random.default_rng(cfg.rng_seed)
    if args.seed_file:
        conn = serialize.load_connection4d(args.seed_file)
        conn.epsilon = args.epsilon or conn.epsilon
    else:
        conn = cfg.seed.build(cfg.base_grid, cfg.fiber_grid,
                              args.epsilon or cfg.epsilons[0], rng)
    tol = args.tol or cfg.solver.tol
    iters = args.max_iters or cfg.solver.max_iters
    result = hym_solver.flow_solve(conn, c0=cfg.solver.c0, tol=tol,
                                   max_iters=iters,
                                   blowup_guard_factor=cfg.solver.blowup_guard_factor,
                                   raise_on_fail=False)
    out = _ensure_out(args.out)
    serialize.save_connection4d(out / "solved.sfc", result.connection)
    serialize.write_report(out / "solve.txt", {"solve": {
        "converged": result.converged, "iterations": result.iterations,
        "residual": result.residual, "blowup": result.blowup,
        "epsilon": result.connection.epsilon,
    }})
    print(f"converged = {result.converged} residual = {result.residual:.3e} "
          f"iterations = {result.iterations}")
    return 0 if result.converged else 3


def _run_family(cfg: RunConfig, out):
    rng = np.random.default_rng(cfg.rng_seed)
    seed = cfg.seed.build(cfg.base_grid, cfg.fiber_grid, cfg.epsilons[0], rng)
    th = cfg.thresholds
    report = adiabatic.run_family(
        seed, list(cfg.epsilons), tol=cfg.solver.tol,
        max_iters=cfg.solver.max_iters, c0=cfg.solver.c0,
        delta_eta=th.delta_eta, eta=th.eta,
        flatten_energy_max=th.flatten_energy_max,
        phi_jump_tol=th.phi_jump_tol,
        blowup_guard_factor=cfg.solver.blowup_guard_factor)
    artifacts = []
    sections = {"family": {
        "epsilons": list(cfg.epsilons),
        "diagnostics_only": report.diagnostics_only,
        "flagged_cells": int(report.flagged_cells.sum()),
        "notes": "; ".join(report.notes),
    }}
    for k, e in enumerate(report.entries):
        sections[f"epsilon_{k}"] = {
            "epsilon": e.epsilon, "converged": e.converged,
            "flow_residual": e.flow_residual,
            "flow_iterations": e.flow_iterations,
            "sup_fiber_curvature": e.sup_fiber_curvature,
            "energy_total": e.energy["total"],
            "masked_fraction": e.phi.masked_fraction if e.phi else 1.0,
            "holo_residual_sup": e.phi.holo_residual_sup if e.phi else float("nan"),
            "blowup": e.blowup,
        }
        name = f"family_eps{k}.dat"
        serialize.write_family_columns(out / name, e)
        artifacts.append(name)
        cname = f"checkpoint_eps{k}.sfc"
        serialize.save_connection4d(out / cname, e.connection)
        artifacts.append(cname)
    serialize.write_report(out / "family.txt", sections)
    artifacts.append("family.txt")
    return report, artifacts


def cmd_family(args):
    cfg = _load_cfg(args)
    out = _ensure_out(args.out)
    report, artifacts = _run_family(cfg, out)
    serialize.write_manifest(out, artifacts, cfg.echo())
    last = report.entries[-1]
    print(f"scales = {len(report.entries)} last sup|F_A| = "
          f"{last.sup_fiber_curvature:.3e} flagged = {int(report.flagged_cells.sum())}")
    return 0


def cmd_mirror(args):
    cfg = _load_cfg(args)
    out = _ensure_out(args.out)
    th = cfg.thresholds
    tol = args.tol or 1e-3
    if args.mirror_op == "solve":
        geom = metric_from_potential(cfg.geometry.build_potential(),
                                     cfg.geometry.resolution,
                                     periods=cfg.geometry.periods)
        wa = tuple(args.winding[:2]) if args.winding else (0, 0)
        wb = tuple(args.winding[2:]) if args.winding else (0, 0)
        sec = mirror_lagrangian.limit_solve(geom, c0=args.c0, winding_a=wa,
                                            winding_b=wb)
        serialize.write_multisection(out / "multisection.dat", sec)
        print(f"solved branch winding_a={wa} winding_b={wb} c0={args.c0}")
        return 0
    conn = serialize.load_connection4d(args.infile)
    phi = adiabatic.phi_extract(conn, flatten_energy_max=th.flatten_energy_max)
    sec = mirror_lagrangian.from_connection(conn, phi, branch_tol=th.branch_tol)
    if args.mirror_op == "extract":
        serialize.write_multisection(out / "multisection.dat", sec)
        print(f"extracted {len(sec.branches)} branches, "
              f"masked cells = {int(sec.masked.sum())}")
        return 0
    # verify
    geom = np.eye(2) if args.flat_metric else metric_from_potential(
        cfg.geometry.build_potential(), conn.nb, periods=cfg.geometry.periods)
    rep = mirror_lagrangian.verify(sec, geom, tol=tol,
                                   check_special=(args.c0 == 0.0), conn=conn,
                                   flow_tol=cfg.solver.tol)
    serialize.write_report(out / "verification.txt", {"verification": {
        "lagrangian_sup": rep.lagrangian_sup, "lagrangian_l2": rep.lagrangian_l2,
        "special_sup": rep.special_sup, "special_l2": rep.special_l2,
        "flat_bundle_sup": rep.flat_bundle_sup,
        "two_path_agreement": rep.two_path_agreement,
        "tolerance": rep.tolerance, "passed": rep.passed,
    }})
    print(f"lagrangian_sup = {rep.lagrangian_sup:.3e} "
          f"special_sup = {rep.special_sup} passed = {rep.passed}")
    return 0 if rep.passed else 3


def cmd_calibrate(args):
    res = calibrate.run_calibration(seed=args.seed,
                                    samples_constant=args.samples,
                                    samples_field=max(args.samples // 25, 40),
                                    samples_displacement=max(args.samples // 10, 100))
    out = _ensure_out(args.out)
    serialize.write_report(out / "calibration.txt", {"calibration": res.as_dict()})
    for k, v in res.as_dict().items():
        print(f"{k} = {v}")
    return 0


def cmd_run(args):
    cfg = _load_cfg(args)
    out = _ensure_out(args.out)
    artifacts = []
    status = "ok"
    try:
        if "geometry" in cfg.pipeline:
            geom = metric_from_potential(cfg.geometry.build_potential(),
                                         cfg.geometry.resolution,
                                         periods=cfg.geometry.periods,
                                         cy_tol=cfg.geometry.cy_tol)
            serialize.write_report(out / "geometry.txt",
                                   {"geometry": geom.summary()})
            artifacts.append("geometry.txt")
            es = epsilon_structure(geom, cfg.epsilons[-1])
            serialize.write_report(out / "epsilon.txt", {"epsilon": {
                "epsilon": es.epsilon, "omega_scale": es.omega_scale,
                "fiber_J_scale": es.fiber_J_scale,
                "total_volume": es.total_volume,
            }})
            artifacts.append("epsilon.txt")
        report = None
        if "family" in cfg.pipeline or "solve" in cfg.pipeline:
            report, fam_artifacts = _run_family(cfg, out)
            artifacts.extend(fam_artifacts)
        if "mirror" in cfg.pipeline and report is not None:
            last = report.entries[-1]
            phi = last.phi or adiabatic.phi_extract(last.connection)
            sec = mirror_lagrangian.from_connection(
                last.connection, phi, branch_tol=cfg.thresholds.branch_tol)
            serialize.write_multisection(out / "multisection.dat", sec)
            artifacts.append("multisection.dat")
            rep = mirror_lagrangian.verify(sec, np.eye(2), tol=1e-3,
                                           check_special=(cfg.solver.c0 == 0.0),
                                           conn=last.connection,
                                           flow_tol=cfg.solver.tol)
            serialize.write_report(out / "verification.txt", {"verification": {
                "lagrangian_sup": rep.lagrangian_sup,
                "special_sup": rep.special_sup,
                "flat_bundle_sup": rep.flat_bundle_sup,
                "two_path_agreement": rep.two_path_agreement,
                "passed": rep.passed,
            }})
            artifacts.append("verification.txt")
    except SemiflatError as exc:
        status = f"FAILED: {exc}"
        (out / "FAILED").write_text(str(exc))
        artifacts.append("FAILED")
    dump_config(cfg, out / "config_echo.yaml")
    artifacts.append("config_echo.yaml")
    serialize.write_manifest(out, artifacts, cfg.echo(), status=status)
    artifacts.append("manifest.json")
    print(f"status = {status}; artifacts in {out}")
    return 0 if status == "ok" else 2


def build_parser():
    p = argparse.ArgumentParser(prog="semiflat",
                                description=__doc__.splitlines()[0])
    p.add_argument("--config", help="YAML run configuration")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("geometry", help="base geometry operations")
    gsub = g.add_subparsers(dest="geometry_op", required=True)
    gc = gsub.add_parser("check", help="build the metric and report the flags")
    gc.add_argument("--out", default="out")
    gc.set_defaults(func=cmd_geometry_check)

    f = sub.add_parser("fiber", help="single-fiber operations")
    f.add_argument("fiber_op", choices=["flatten", "normalize", "classify"])
    f.add_argument("infile", help="serialized fiber connection")
    f.set_defaults(func=cmd_fiber)

    s = sub.add_parser("solve", help="relax one connection at fixed epsilon")
    s.add_argument("--epsilon", type=float)
    s.add_argument("--tol", type=float)
    s.add_argument("--max-iters", type=int, dest="max_iters")
    s.add_argument("--seed-file", dest="seed_file")
    s.add_argument("--out", default="out")
    s.set_defaults(func=cmd_solve)

    fam = sub.add_parser("family", help="run the shrinking-fiber family")
    fam.add_argument("--out", default="out")
    fam.set_defaults(func=cmd_family)

    m = sub.add_parser("mirror", help="dual-torus section operations")
    m.add_argument("mirror_op", choices=["solve", "extract", "verify"])
    m.add_argument("--in", dest="infile", help="4D connection checkpoint")
    m.add_argument("--c0", type=float, default=0.0)
    m.add_argument("--winding", type=int, nargs=4,
                   metavar=("WA_S", "WA_T", "WB_S", "WB_T"))
    m.add_argument("--tol", type=float)
    m.add_argument("--flat-metric", action="store_true", dest="flat_metric")
    m.add_argument("--out", default="out")
    m.set_defaults(func=cmd_mirror)

    c = sub.add_parser("calibrate", help="re-run the brute-force constant sweeps")
    c.add_argument("--samples", type=int, default=10000)
    c.add_argument("--seed", type=int, default=20240801)
    c.add_argument("--out", default="out")
    c.set_defaults(func=cmd_calibrate)

    r = sub.add_parser("run", help="full pipeline per config, with manifest")
    r.add_argument("--out", default="out")
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SemiflatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
