"""Command-line entry point.

Subcommands ``gen-substrate``, ``solve``, ``eap``, ``mc`` and ``compare``.
Every run writes ``config.resolved`` into its output directory; passing that
file back with ``--config`` reproduces the run.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 comparison
outside tolerance.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import _accel, textio
from .errors import NumericalError, PackingError, ParameterError, ParseError
from .substrate import (
    DEFAULT_COUNT,
    DEFAULT_K0,
    DEFAULT_RMAX,
    DEFAULT_RMIN,
    DEFAULT_SIDE,
    Substrate,
    generate_substrate,
    load_substrate,
    save_substrate,
    substrate_digest,
)

log = logging.getLogger("dgeap")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_TOLERANCE = 0, 1, 2, 3
WORKERS_ENV = "DGEAP_WORKERS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# argument definitions

def _common(p):
    p.add_argument("--config", type=Path, help="key = value file; flags given on the command line win")
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.add_argument("--workers", type=int, default=None,
                   help=f"worker threads (default: ${WORKERS_ENV} or all cores)")
    p.add_argument("--backend", choices=("numba", "numpy"), default=None)
    p.add_argument("-v", "--verbose", action="store_true")


def _substrate_args(p):
    p.add_argument("--substrate", type=Path, default=None,
                   help="substrate file; omit for free diffusion in a square of --side")
    p.add_argument("--side", type=float, default=DEFAULT_SIDE)
    p.add_argument("--k0", type=float, default=None,
                   help="extracellular diffusivity in um^2/s (default: from the substrate file, else 450)")


def _solver_args(p, T_default=0.036):
    p.add_argument("--n", type=int, default=400, help="pixels per side")
    p.add_argument("--order", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--T", type=float, default=T_default, help="final time in seconds")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--dt", type=float, default=None)
    g.add_argument("--cfl", type=float, default=None, help="k dt / h^2")
    g.add_argument("--steps", type=int, default=None)
    p.add_argument("--rk", choices=("rk4", "rk2"), default="rk4")
    p.add_argument("--sigma0", type=float, default=None, help="initial bump width (default 2h)")


def build_parser():
    parser = _Parser(prog="dgeap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-substrate", help="pack random circles into a square")
    _common(p)
    p.add_argument("--side", type=float, default=DEFAULT_SIDE)
    p.add_argument("--count", type=int, default=DEFAULT_COUNT)
    p.add_argument("--rmin", type=float, default=DEFAULT_RMIN)
    p.add_argument("--rmax", type=float, default=DEFAULT_RMAX)
    p.add_argument("--k0", type=float, default=DEFAULT_K0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-attempts", type=int, default=100_000)
    p.add_argument("--output", default="substrate.txt", help="file name inside --out-dir")

    p = sub.add_parser("solve", help="one heat solve from a regularized delta")
    _common(p)
    _substrate_args(p)
    _solver_args(p)
    p.add_argument("--x0", type=float, nargs=2, default=None, metavar=("X", "Y"),
                   help="delta location (default: domain center)")
    p.add_argument("--dump-every", type=int, default=0,
                   help="also dump the field every this many steps")

    p = sub.add_parser("eap", help="Gaussian profile of the propagator over many seeds")
    _common(p)
    _substrate_args(p)
    _solver_args(p)
    p.add_argument("--m", type=int, default=37, help="number of seed points")
    p.add_argument("--box-side", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--centering", choices=("seed", "mean"), default="seed")
    p.add_argument("--subtract-initial-covariance", action="store_true")
    p.add_argument("--dump-per-seed-fields", action="store_true")

    p = sub.add_parser("mc", help="Monte Carlo random walk")
    _common(p)
    _substrate_args(p)
    p.add_argument("--t-s", type=float, default=0.036, help="duration in seconds")
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--walkers", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--box-side", type=float, default=20.0)
    p.add_argument("--trajectories", action="store_true",
                   help="dump the paths of the first 100 walkers")

    p = sub.add_parser("compare", help="DG fit against a Monte Carlo result")
    _common(p)
    p.add_argument("--eap", type=Path, required=True, help="fit.txt from 'eap'")
    p.add_argument("--mc", type=Path, required=True, help="mc_result.txt from 'mc'")
    p.add_argument("--rel-tol", type=float, default=0.05)
    p.add_argument("--n-se", type=float, default=3.0, help="tolerance in MC standard errors")
    return parser


def parse_args(argv):
    """Parse ``argv``; values from ``--config`` fill in flags not given explicitly."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        values = textio.read_kv(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest in ("command", "config"):
            continue
        if dest not in known:
            raise UsageError(f"unknown key {key!r} in {args.config}")
        action = known[dest]
        if value is None:
            defaults[dest] = None
        elif action.nargs == 2:
            defaults[dest] = [float(v) for v in str(value).split()]
        elif action.type is Path:
            defaults[dest] = Path(value)
        elif action.type is not None:
            defaults[dest] = action.type(value)
        else:
            defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def write_resolved(args, out_dir):
    items = {"command": args.command}
    for key, value in sorted(vars(args).items()):
        if key in ("command", "config", "out_dir", "verbose"):
            continue
        if isinstance(value, (list, tuple)):
            value = " ".join(repr(float(v)) for v in value)
        items[key] = value
    textio.write_kv(Path(out_dir) / "config.resolved", items,
                    header=f"dgeap {args.command}: rerun with --config config.resolved")


# --------------------------------------------------------------------------
# helpers

def _load_substrate(args) -> Substrate:
    if args.substrate is None:
        return Substrate(args.side, (), DEFAULT_K0 if args.k0 is None else args.k0)
    sub = load_substrate(args.substrate)
    if args.k0 is not None and args.k0 != sub.k0:
        sub = Substrate(sub.side, sub.circles, args.k0)
    return sub


def _solver_config(args, mesh):
    from .dg.solver import SolverConfig

    kw = dict(workers=args.workers, backend=args.backend)
    if args.dt is not None:
        cfg = SolverConfig(order=args.order, dt=args.dt, T=args.T, rk=args.rk, **kw)
    else:
        cfg = SolverConfig.for_mesh(mesh, args.T, order=args.order, cfl=args.cfl,
                                    steps=args.steps, rk=args.rk, **kw)
    cfg.check_stability(mesh)
    return cfg


def _time_tag(t):
    return f"{t:.6f}".rstrip("0").rstrip(".") or "0"


def _summary(sub: Substrate):
    radii = sub.radii
    return {
        "side": sub.side,
        "k0": sub.k0,
        "circles": len(sub),
        "radius_min": float(radii.min()) if len(sub) else None,
        "radius_max": float(radii.max()) if len(sub) else None,
        "area_fraction": sub.area_fraction(),
        "substrate_sha256": substrate_digest(sub),
    }


# --------------------------------------------------------------------------
# subcommands

def cmd_gen_substrate(args):
    if args.count < 0:
        raise ParameterError("--count must be >= 0")
    out = args.out_dir
    try:
        sub = generate_substrate(args.side, args.count, args.rmin, args.rmax, args.k0,
                                 seed=args.seed, max_attempts=args.max_attempts)
    except PackingError as exc:
        if exc.partial is not None:
            stats = _summary(exc.partial)
            stats.update(requested=args.count, failed_index=exc.index)
            textio.write_kv(out / "summary.txt", stats, header="packing FAILED; partial statistics")
            print(textio.format_kv(stats), end="")
        raise
    save_substrate(sub, out / args.output)
    stats = _summary(sub)
    textio.write_kv(out / "summary.txt", stats, header="substrate summary")
    print(textio.format_kv(stats), end="")
    return EXIT_OK


def cmd_solve(args):
    from .dg.basis import make_basis
    from .dg.solver import pixel_means, project_delta, solve
    from .mesh import assign_diffusivity, build_mesh

    out = args.out_dir
    sub = _load_substrate(args)
    t0 = time.perf_counter()
    mesh = assign_diffusivity(build_mesh(sub.side, args.n, k0=sub.k0), sub)
    basis = make_basis(args.order)
    cfg = _solver_config(args, mesh)
    x0 = sub.center if args.x0 is None else tuple(args.x0)
    init = project_delta(mesh, basis, x0, args.sigma0)
    t_mesh = time.perf_counter() - t0

    def dump(t, u):
        tag = _time_tag(t)
        textio.write_grid(out / f"u_t{tag}.csv", pixel_means(mesh, basis, u),
                          header=f"pixel means at t={t!r} s; rows = y, {args.n}x{args.n}")
        np.savetxt(out / f"coeffs_t{tag}.csv", u.T, delimiter=",", fmt="%.17g",
                   header=f"DG coefficients at t={t!r} s; one row per element", comments="# ")

    dump(0.0, init.u)
    callback = None
    if args.dump_every > 0:
        def callback(step, t, u):
            if step % args.dump_every == 0:
                dump(t, u)

    t1 = time.perf_counter()
    res = solve(mesh, basis, init, cfg, record_every=1, callback=callback)
    t_solve = time.perf_counter() - t1
    dump(res.state.t, res.state.u)
    np.savetxt(out / "mass.csv", np.column_stack([res.times, res.mass, res.boundary_peak_ratio]),
               delimiter=",", fmt="%.17g", header="t,mass,boundary_peak_ratio", comments="")
    drift = abs(res.mass[-1] - res.mass[0]) / abs(res.mass[0])
    textio.write_kv(out / "timings.txt", {"mesh": t_mesh, "solve": t_solve, "steps": res.steps,
                                          "dt": cfg.dt, "mass_drift": drift},
                    header="wall-clock seconds per phase")
    log.info("solved %d steps in %.2fs, relative mass drift %.3g", res.steps, t_solve, drift)
    return EXIT_OK


def cmd_eap(args):
    from .eap import SchemeConfig, run_scheme

    sub = _load_substrate(args)
    cfg = SchemeConfig(
        n=args.n, order=args.order, T=args.T, m=args.m, box_side=args.box_side, seed=args.seed,
        cfl=args.cfl, steps=args.steps, rk=args.rk, sigma0=args.sigma0,
        subtract_initial_covariance=args.subtract_initial_covariance, centering=args.centering,
        dump_per_seed_fields=args.dump_per_seed_fields, workers=args.workers, backend=args.backend,
    )
    if args.dt is not None:
        cfg.steps = max(int(math.ceil(args.T / args.dt * (1 - 1e-12))), 1)
        if abs(args.T / cfg.steps - args.dt) > 1e-12 * args.dt:
            raise ParameterError("--dt must divide --T for the eap scheme; use --steps")
    res = run_scheme(sub, cfg, out_dir=args.out_dir, keep_densities=cfg.dump_per_seed_fields)
    fit = res.fit
    print(f"sigma = [[{fit.sigma_xx:.6g}, {fit.sigma_xy:.6g}], [{fit.sigma_xy:.6g}, {fit.sigma_yy:.6g}]]"
          f"  residual = {fit.residual:.3g}")
    for phase, secs in res.timings.items():
        log.info("%-6s %.2fs", phase, secs)
    return EXIT_OK


def cmd_mc(args):
    from .mc import TRAJECTORY_WALKERS, McConfig, walk, write_result, write_trajectories

    sub = _load_substrate(args)
    cfg = McConfig(D=sub.k0, t_s=args.t_s, T_steps=args.steps, n_walkers=args.walkers,
                   seed=args.seed, box_side=args.box_side)
    res = walk(sub, cfg, workers=args.workers, backend=args.backend,
               trajectories=TRAJECTORY_WALKERS if args.trajectories else 0)
    write_result(args.out_dir / "mc_result.txt", res,
                 extra={"circles": len(sub), "substrate_sha256": substrate_digest(sub)})
    if res.trajectories is not None:
        write_trajectories(args.out_dir / "trajectories.csv", res.trajectories)
    c = res.covariance
    print(f"cov = [[{c[0, 0]:.6g}, {c[0, 1]:.6g}], [{c[1, 0]:.6g}, {c[1, 1]:.6g}]]"
          f"  walkers = {res.n_walkers}  ({res.elapsed:.1f}s)")
    return EXIT_OK


def compare_records(dg, mc, rel_tol=0.05, n_se=3.0):
    """Per-entry comparison rows and overall verdict.

    An entry passes when ``|dg - mc| <= max(rel_tol |mc|, n_se se)``.
    """
    rows = []
    for entry in ("xx", "xy", "yy"):
        a = float(dg[f"sigma_{entry}"])
        b = float(mc[f"cov_{entry}"])
        se = float(mc[f"se_{entry}"])
        tol = max(rel_tol * abs(b), n_se * se)
        rows.append({"entry": entry, "dg": a, "mc": b, "abs_diff": abs(a - b),
                     "tolerance": tol, "pass": abs(a - b) <= tol})
    return rows, all(r["pass"] for r in rows)


def cmd_compare(args):
    dg = textio.read_kv(args.eap)
    mc = textio.read_kv(args.mc)
    digests = []
    for path in (args.eap, args.mc):
        # raw text: a hex digest may happen to look like a number
        digest = textio.read_kv(path, raw=True).get("substrate_sha256")
        if digest is None:
            raise UsageError(f"{path} does not record a substrate digest")
        digests.append(digest)
    if digests[0] != digests[1]:
        raise UsageError(
            f"substrates differ ({digests[0][:12]} vs {digests[1][:12]}); refusing to compare"
        )
    rows, ok = compare_records(dg, mc, args.rel_tol, args.n_se)
    report = {}
    for r in rows:
        e = r["entry"]
        report.update({f"dg_{e}": r["dg"], f"mc_{e}": r["mc"], f"abs_diff_{e}": r["abs_diff"],
                       f"tol_{e}": r["tolerance"], f"pass_{e}": r["pass"]})
    if int(dg.get("circles", 1)) == 0:
        analytic = 2.0 * float(dg["T"]) * float(dg["k0"])
        report["analytic_2Tk"] = analytic
        for e in ("xx", "yy"):
            report[f"dg_minus_analytic_{e}"] = report[f"dg_{e}"] - analytic
            report[f"mc_minus_analytic_{e}"] = report[f"mc_{e}"] - analytic
    report["rel_tol"] = args.rel_tol
    report["n_se"] = args.n_se
    report["pass"] = ok
    textio.write_kv(args.out_dir / "compare.txt", report, header="DG fit vs Monte Carlo")
    for r in rows:
        flag = "ok  " if r["pass"] else "FAIL"
        print(f"{flag} sigma_{r['entry']}: dg={r['dg']:.6g} mc={r['mc']:.6g} "
              f"|diff|={r['abs_diff']:.3g} tol={r['tolerance']:.3g}")
    if "analytic_2Tk" in report:
        print(f"analytic 2Tk = {report['analytic_2Tk']:.6g}")
    return EXIT_OK if ok else EXIT_TOLERANCE


COMMANDS = {
    "gen-substrate": cmd_gen_substrate,
    "solve": cmd_solve,
    "eap": cmd_eap,
    "mc": cmd_mc,
    "compare": cmd_compare,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"dgeap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers is None:
        args.workers = _accel.default_workers()
    if getattr(args, "backend", None) is None:
        args.backend = _accel.resolve_backend(None)
    try:
        if args.workers < 1:
            raise ParameterError("--workers must be >= 1")
        args.out_dir.mkdir(parents=True, exist_ok=True)
        write_resolved(args, args.out_dir)
        return COMMANDS[args.command](args)
    except (UsageError, ParameterError, ParseError) as exc:
        print(f"dgeap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"dgeap: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
