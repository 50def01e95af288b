"""Command-line front end: ``qclab <subcommand> [flags]``.

Exit codes: 0 success, 1 verdict failure or computational error, 2 usage error.
Reports are JSON with sorted keys and no timings, so equal configurations
give byte-identical output.  Non-finite numbers are written as null.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, beltrami, fields, gridio, matalg, stoilow
from .errors import QCLabError

EXIT_OK, EXIT_VERDICT, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _clean(obj):
    """Convert numpy scalars and arrays to plain JSON values; NaN and inf become None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, complex):
        return [_clean(obj.real), _clean(obj.imag)]
    return obj


def dumps(report) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _floats(text, name):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--{name}: expected comma-separated numbers, got {text!r}")


def _box(text):
    vals = _floats(text, "box")
    if len(vals) != 4:
        raise UsageError("--box needs x0,x1,y0,y1")
    return vals


def _spec(args, default_box=(-1.0, 1.0, -1.0, 1.0), cell_centered=False):
    x0, x1, y0, y1 = _box(args.box) if getattr(args, "box", None) else default_box
    nx = args.nx or args.grid
    ny = args.ny or args.grid
    if nx < 2 or ny < 2:
        raise UsageError("grid sizes must be at least 2")
    if cell_centered:
        return fields.GridSpec.cell_centered(x0, x1, y0, y1, nx, ny)
    return fields.GridSpec(x0, x1, y0, y1, nx, ny)


def _catalog(name):
    try:
        return fields.catalog_map(name)
    except KeyError as exc:
        raise UsageError(str(exc.args[0]))


def _load_pair(args, spec):
    """Catalog pair id, or two QCF1 field dumps separated by a comma."""
    parts = args.pair.split(",")
    if len(parts) == 2 and all(Path(p).suffix in (".qcf", ".bin") or Path(p).exists() for p in parts):
        u, v = (gridio.read_field(Path(p)) for p in parts)
        if u.spec != v.spec:
            raise UsageError("the two field files must share a grid")
        return u, v, u.spec
    try:
        um, vm = fields.catalog_pair(args.pair)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc.args[0]) if exc.args else str(exc))
    return fields.sample(um, spec), fields.sample(vm, spec), spec


def _write_report(report, args, name):
    text = dumps(report)
    if getattr(args, "out_dir", None):
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
    sys.stdout.write(text)


def _config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",)}
    return {"config": cfg, "version": __version__}


def _solver_config(args) -> beltrami.SolverConfig:
    try:
        return beltrami.SolverConfig(
            epsilon_trunc=args.epsilon if getattr(args, "epsilon", None) else 0.1,
            max_neumann_iters=args.max_iters,
            residual_tol=args.tol,
            padding_factor=args.padding,
            kappa_max=args.kappa_max,
        )
    except ValueError as exc:
        raise UsageError(str(exc))


# --------------------------------------------------------------------------
# subcommands


def cmd_algebra_check(args):
    t = matalg.identity_defects(samples=args.samples, seed=args.seed)
    separation = t.pop("similarity_separation_violations", 0)
    worst = max(t.values())
    ok = worst <= args.tol and separation == 0
    report = {**_config(args), "defects": t, "similarity_separation_violations": separation,
              "max_defect": worst, "tolerance": args.tol, "pass": ok}
    _write_report(report, args, "algebra_check.json")
    return EXIT_OK if ok else EXIT_VERDICT


def _bump_mu(spec, kappa):
    z = spec.z()
    r2 = np.abs(z) ** 2
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        b = np.where(r2 < 0.5, np.exp(2 - 1 / (0.5 - r2)), 0.0)
    c = b * (np.cos(3 * z.real) + 0.5j * np.sin(2 * z.imag + 0.4))
    return kappa * c / np.abs(c).max()


def cmd_solve(args):
    cfg = _solver_config(args)
    if args.mu_file:
        grid = gridio.read_complex(Path(args.mu_file))
        mu = beltrami.MuField(grid)
    elif args.mu.startswith("bump"):
        spec = _spec(args)
        kappa = float(args.mu.split(":", 1)[1]) if ":" in args.mu else 0.5
        mu = beltrami.MuField.from_values(spec, _bump_mu(spec, kappa))
    else:
        spec = _spec(args)
        mu = beltrami.MuField.of_field(fields.sample(_catalog(args.mu), spec))
    sol = beltrami.solve_principal(mu, cfg, strict=False)
    report = {
        **_config(args),
        "iterations": sol.iterations_used,
        "kappa": sol.kappa,
        "max_residual": sol.max_residual,
        "fd_max_residual": sol.fd_max_residual,
        "converged": sol.neumann_converged,
        "grid": mu.spec.to_dict(),
    }
    if args.out_dir:
        report["outputs"] = {"solution": "solution.qcf"}
        gridio.write_field(Path(args.out_dir) / "solution.qcf", sol.f)
    _write_report(report, args, "solve.json")
    return EXIT_OK if sol.neumann_converged else EXIT_VERDICT


def cmd_decompose(args):
    spec = _spec(args)
    u, v, spec = _load_pair(args, spec)
    schedule = _floats(args.eps_schedule, "eps-schedule") if args.eps_schedule else stoilow.DEFAULT_SCHEDULE
    result, trace = stoilow.decompose_pair(u, v, _solver_config(args), schedule,
                                           mu_tol=args.mu_tol, pole_factor=args.pole_factor)
    summary = result.summary()
    try:
        slope = stoilow.energy_trace_slope(trace)
        summary["energy_slope"] = {"slope": slope.slope, "at_floor": slope.at_floor}
    except QCLabError as exc:
        summary["energy_slope"] = {"error": f"{type(exc).__name__}: {exc}"}
    report = {**_config(args), **summary, "energy_trace": trace.to_dict(), "grid": spec.to_dict()}
    if args.out_dir:
        out = Path(args.out_dir)
        gridio.write_field(out / "w.qcf", result.w)
        gridio.write_field(out / "h.qcf", result.h)
        gridio.write_field(out / "phi_u.qcf", result.phi_u)
        gridio.write_field(out / "phi_v.qcf", result.phi_v)
        gridio.write_complex(out / "psi.qcf", result.psi)
        gridio.write_array(out / "pole_flags.qcf", result.pole_flags.astype(float), spec, "mask", ["pole"])
        report["outputs"] = {k: f"{k}.qcf" for k in ("w", "h", "phi_u", "phi_v", "psi", "pole_flags")}
    ok = math.isfinite(result.relation_residual)
    if args.max_residual is not None:
        ok = ok and result.relation_residual <= args.max_residual
    report["pass"] = ok
    _write_report(report, args, "decompose.json")
    return EXIT_OK if ok else EXIT_VERDICT


def cmd_rigidity(args):
    spec = _spec(args)
    if args.rotate is not None or args.scale is not None:
        inner = _catalog(args.pair)
        um = inner
        vm = fields.scaled_rotation(inner, args.scale if args.scale is not None else 1.0, args.rotate or 0.0)
        u, v = fields.sample(um, spec), fields.sample(vm, spec)
    else:
        u, v, spec = _load_pair(args, spec)
    rep = stoilow.rigidity_fit(u, v, rigid_tol=args.rigid_tol, shape_tol=args.shape_tol,
                               fit_scale=args.fit_scale or (args.scale not in (None, 1.0)))
    report = {**_config(args), **rep.to_dict(), "expected": args.expect}
    ok = rep.verdict == args.expect
    report["pass"] = ok
    _write_report(report, args, "rigidity.json")
    return EXIT_OK if ok else EXIT_VERDICT


def counterexample_report(theta: float, n: int, scan_nx: int = 8192, scan_ny: int = 64) -> dict:
    """Piecewise counterexample checks: coefficient match, rigidity failure and divergence of the dilatation integral."""
    um, vm = fields.example1_pair(theta)
    spec = fields.GridSpec.cell_centered(-1, 1, -1, 1, n, n)
    u, v = fields.sample(um, spec), fields.sample(vm, spec)
    X, _ = spec.mesh()
    off_seam = X != 0
    gap = float(np.max(np.abs(matalg.beltrami_complex(u.gradients) - matalg.beltrami_complex(v.gradients))[off_seam]))
    rep = stoilow.rigidity_fit(u, v)
    scan_spec = fields.GridSpec.cell_centered(0, 1, -1, 1, scan_nx, scan_ny)
    deltas = [2.0 ** -k for k in range(4, 11)]
    scan = fields.integrability_scan(fields.sample(um, scan_spec), deltas)
    values = [s for _, s in scan]
    inc = np.diff(values)
    return {
        "theta": theta,
        "grid": spec.to_dict(),
        "mu_max_gap": gap,
        "mu_match": gap <= 1e-12,
        "rigid": rep.verdict == "rigid",
        "rigidity": rep.to_dict(),
        "scan": [[d, s] for d, s in scan],
        "increments": inc.tolist(),
        "divergence_slope": float(np.mean(inc)),
        "increment_lower_bound": 2 * math.log(2),
        "monotone_increasing": bool(np.all(inc > 0)),
    }


def cmd_counterexample(args):
    if not 0 < args.theta < 2 * math.pi:
        raise UsageError("--theta must lie in (0, 2 pi)")
    rep = counterexample_report(args.theta, args.grid, args.scan_nx, args.scan_ny)
    ok = rep["mu_match"] and not rep["rigid"] and rep["monotone_increasing"]
    report = {**_config(args), **rep, "pass": ok}
    if args.out_dir:
        gridio.write_scan_csv(Path(args.out_dir) / "scan.csv", rep["scan"])
        report["outputs"] = {"scan": "scan.csv"}
    _write_report(report, args, "counterexample.json")
    return EXIT_OK if ok else EXIT_VERDICT


def cmd_scan(args):
    amap = _catalog(args.map)
    spec = _spec(args, default_box=(0.0, 1.0, -1.0, 1.0), cell_centered=True)
    region = _box(args.region) if args.region else (spec.x_min - spec.hx / 2, spec.x_max + spec.hx / 2,
                                                    spec.y_min - spec.hy / 2, spec.y_max + spec.hy / 2)
    deltas = _floats(args.deltas, "deltas")
    scan = fields.integrability_scan(fields.sample(amap, spec), deltas,
                                     ((region[0], region[1]), (region[2], region[3])))
    report = {**_config(args), "scan": [[d, s] for d, s in scan], "grid": spec.to_dict()}
    if args.out_dir:
        gridio.write_scan_csv(Path(args.out_dir) / "scan.csv", scan)
        report["outputs"] = {"scan": "scan.csv"}
    _write_report(report, args, "scan.json")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _grid_flags(p, default=256):
    p.add_argument("--grid", type=int, default=default, help="samples per axis")
    p.add_argument("--nx", type=int, default=None)
    p.add_argument("--ny", type=int, default=None)
    p.add_argument("--box", default=None, help="x0,x1,y0,y1")


def _solver_flags(p):
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--padding", type=float, default=2.0)
    p.add_argument("--kappa-max", type=float, default=0.95)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qclab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"qclab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("algebra-check", help="random-matrix identity suite")
    p.add_argument("--samples", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_algebra_check)

    p = sub.add_parser("solve", help="principal solution of the Beltrami equation")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--mu-file", default=None, help="QCF1 complex grid")
    src.add_argument("--mu", default="bump:0.5", help="catalog map name or bump[:kappa]")
    _grid_flags(p)
    p.add_argument("--epsilon", type=float, default=0.1)
    _solver_flags(p)
    p.add_argument("--out-dir", "--out", dest="out_dir", default=None)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("decompose", help="factor a pair with a common Beltrami coefficient")
    p.add_argument("--pair", required=True, help="catalog pair, 'u,v' map names, or two .qcf files")
    _grid_flags(p)
    p.add_argument("--eps-schedule", default=None, help="comma-separated epsilons")
    _solver_flags(p)
    p.add_argument("--mu-tol", type=float, default=1e-8)
    p.add_argument("--pole-factor", type=float, default=4.0)
    p.add_argument("--max-residual", type=float, default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("rigidity", help="fit one rotation between two gradient fields")
    p.add_argument("--pair", required=True, help="catalog pair, or one map with --rotate/--scale")
    _grid_flags(p)
    p.add_argument("--rotate", type=float, default=None, help="build v = k R(angle) u")
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--fit-scale", action="store_true")
    p.add_argument("--rigid-tol", type=float, default=1e-3)
    p.add_argument("--shape-tol", type=float, default=1e-6)
    p.add_argument("--expect", choices=["rigid", "non_rigid"], default="rigid")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_rigidity)

    p = sub.add_parser("counterexample", help="run the piecewise counterexample end to end")
    p.add_argument("--theta", type=float, default=math.pi / 2)
    p.add_argument("--grid", type=int, default=256)
    p.add_argument("--scan-nx", type=int, default=8192)
    p.add_argument("--scan-ny", type=int, default=64)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_counterexample)

    p = sub.add_parser("scan", help="dilatation integral over {x1 > delta}")
    p.add_argument("--map", default="example1-u")
    _grid_flags(p, default=512)
    p.add_argument("--region", default=None, help="x0,x1,y0,y1 (default: the grid's cells)")
    p.add_argument("--deltas", default=",".join(repr(2.0 ** -k) for k in range(4, 11)))
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_scan)
    return ap


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"qclab: error: {exc}\n")
        return EXIT_USAGE
    except QCLabError as exc:
        report = {**_config(args), "error": {"type": type(exc).__name__, "message": str(exc)}, "pass": False}
        _write_report(report, args, f"{args.command}.json")
        return EXIT_VERDICT


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
