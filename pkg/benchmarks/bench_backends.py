"""Numba kernels against the pure-numpy fallback.

Times one RK4 step of the DG operator and a block of Monte Carlo walkers on
both backends, checks the outputs agree, and prints a small table.

    python benchmarks/bench_backends.py --n 200 --order 1 --repeat 5
"""

import argparse
import time

import numpy as np

from dgeap import _accel
from dgeap.dg.basis import make_basis
from dgeap.dg.solver import DGOperator, RungeKutta, SolverConfig, project_delta
from dgeap.eap import sample_seeds
from dgeap.mc import McConfig, walk
from dgeap.mesh import assign_diffusivity, build_mesh
from dgeap.substrate import generate_substrate


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_dg(args, sub):
    mesh = assign_diffusivity(build_mesh(sub.side, args.n, k0=sub.k0), sub)
    basis = make_basis(args.order)
    dt = SolverConfig.for_mesh(mesh, 0.036, order=args.order).dt
    x0 = sample_seeds(sub, 1, seed=0, mesh=mesh).points[0]
    u0 = project_delta(mesh, basis, x0).u
    res = {}
    for backend in ("numba", "numpy"):
        rk = RungeKutta(DGOperator(mesh, basis, backend), "rk4")
        rk.step(u0.copy(), dt)  # compile / warm caches

        def run():
            u = u0.copy()
            for _ in range(args.steps):
                rk.step(u, dt)
            return u

        res[backend] = best_of(run, args.repeat)
    diff = np.abs(res["numba"][1] - res["numpy"][1]).max()
    return res["numba"][0] / args.steps, res["numpy"][0] / args.steps, diff


def bench_mc(args, sub):
    cfg = McConfig(T_steps=args.mc_steps, n_walkers=args.walkers, seed=1)
    res = {}
    for backend in ("numba", "numpy"):
        walk(sub, McConfig(T_steps=2, n_walkers=8), backend=backend)  # compile
        res[backend] = best_of(lambda: walk(sub, cfg, backend=backend), args.repeat)
    diff = np.abs(res["numba"][1].covariance - res["numpy"][1].covariance).max()
    return res["numba"][0], res["numpy"][0], diff


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=200, help="pixels per side for the DG step")
    p.add_argument("--order", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--steps", type=int, default=5, help="RK4 steps per timing")
    p.add_argument("--walkers", type=int, default=4096)
    p.add_argument("--mc-steps", type=int, default=500)
    p.add_argument("--circles", type=int, default=1901, help="0 for free diffusion")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--workers", type=int, default=None)
    args = p.parse_args(argv)

    _accel.set_workers(args.workers)
    sub = generate_substrate(count=args.circles, seed=0)
    print(f"threads: {_accel.max_workers() if args.workers is None else args.workers}, "
          f"circles: {len(sub)}")

    nb, npy, diff = bench_dg(args, sub)
    print(f"DG RK4 step  n={args.n} p={args.order}: numba {nb * 1e3:8.2f} ms  "
          f"numpy {npy * 1e3:8.2f} ms  speedup {npy / nb:5.1f}x  max|diff| {diff:.1e}")
    nb, npy, diff = bench_mc(args, sub)
    print(f"MC walk {args.walkers} x {args.mc_steps}: numba {nb:8.3f} s   "
          f"numpy {npy:8.3f} s   speedup {npy / nb:5.1f}x  max|diff| {diff:.1e}")


if __name__ == "__main__":
    main()
