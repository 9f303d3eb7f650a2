"""Gaussian profile of the ensemble average propagator.

Pipeline: sample extracellular seed points, solve one heat problem per
seed from a regularized delta, sample each solution on a displacement grid
centered at its seed, normalize to unit mass, average the densities, and
fit a Gaussian by moment matching.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import textio
from .dg.basis import make_basis
from .dg.solver import FieldState, SolverConfig, evaluate, project_delta, solve
from .errors import (
    DegenerateFieldError,
    DegenerateFitError,
    NumericalError,
    ParameterError,
    SamplingError,
)
from .mesh import assign_diffusivity, build_mesh
from .substrate import substrate_digest

log = logging.getLogger(__name__)

DEFAULT_T = 0.036
DEFAULT_BOX = 20.0
DEFAULT_M = 37


@dataclass(frozen=True)
class SeedSet:
    points: np.ndarray  # (m, 2), micrometres
    box_side: float
    seed: object = None

    @property
    def m(self) -> int:
        return len(self.points)


def sample_seeds(substrate, m, box_side=DEFAULT_BOX, seed=0, mesh=None,
                 max_draws=1_000_000, min_rate=1e-4) -> SeedSet:
    """Uniform points in the centered box of side ``box_side``, outside every disk.

    With ``mesh`` given, points falling in a non-diffusive element of the
    discretized substrate are rejected as well, so every seed can carry
    initial data on that mesh.
    """
    if m < 1:
        raise ParameterError(f"m must be >= 1, got {m}")
    if not (0 < box_side <= substrate.side):
        raise ParameterError(f"box_side must be in (0, {substrate.side}], got {box_side}")
    rng = np.random.default_rng(seed)
    lo = np.asarray(substrate.center) - 0.5 * box_side
    batch = max(4 * m, 1024)
    accepted = []
    n_acc = 0
    draws = 0
    while n_acc < m:
        pts = lo + box_side * rng.random((batch, 2))
        ok = ~substrate.contains_axon_many(pts)
        if mesh is not None:
            e = mesh.locate(pts)
            ok &= (e >= 0) & (mesh.k[np.maximum(e, 0)] > 0)
        good = pts[ok]
        accepted.append(good)
        n_acc += len(good)
        draws += batch
        if draws >= max_draws and n_acc / draws < min_rate:
            raise SamplingError(
                f"acceptance rate {n_acc / draws:.2e} below {min_rate:g} after {draws} draws"
            )
    points = np.concatenate(accepted)[:m]
    points.setflags(write=False)
    return SeedSet(points, float(box_side), seed)


@dataclass
class DensityGrid:
    """Density samples ``values[iy, ix]`` at displacement nodes ``(x[ix], y[iy])``."""

    values: np.ndarray
    x: np.ndarray
    y: np.ndarray

    @property
    def spacing(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def cell_area(self) -> float:
        return float((self.x[1] - self.x[0]) * (self.y[1] - self.y[0]))

    def integral(self) -> float:
        return float(np.sum(self.values) * self.cell_area)

    def same_geometry(self, other) -> bool:
        return (
            self.values.shape == other.values.shape
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )

    def coordinates(self):
        return np.meshgrid(self.x, self.y)


def displacement_axis(n, h):
    """Node coordinates ``(j + 1/2 - n/2) h``, symmetric about 0."""
    return (np.arange(n) + 0.5 - 0.5 * n) * h


def center_normalize(state: FieldState, seed_point, mesh, basis=None, grid_n=None,
                     centering="seed") -> DensityGrid:
    """Sample the field on a grid centered at ``seed_point`` and scale to unit mass.

    The grid has the mesh spacing and ``grid_n`` (default ``mesh.n``) nodes
    per axis; nodes outside the domain read 0.  ``centering="mean"`` shifts
    by the field's own center of mass instead of the seed point.
    """
    basis = make_basis(_order_of(state, basis))
    n = mesh.n if grid_n is None else int(grid_n)
    h = mesh.h
    ax = displacement_axis(n, h)
    center = np.asarray(seed_point, dtype=float).reshape(2)
    if centering == "mean":
        probe = _sample(state, mesh, basis, center, ax)
        mass = probe.sum()
        if not mass > 0:
            raise DegenerateFieldError(f"field has non-positive mass {mass * h * h:g}")
        xx, yy = np.meshgrid(ax, ax)
        center = center + np.array([(probe * xx).sum(), (probe * yy).sum()]) / mass
    elif centering != "seed":
        raise ParameterError(f"centering must be 'seed' or 'mean', got {centering!r}")
    values = _sample(state, mesh, basis, center, ax)
    total = float(values.sum() * h * h)
    if not total > 0:
        raise DegenerateFieldError(f"field has non-positive mass {total:g}")
    return DensityGrid(values / total, ax.copy(), ax.copy())


def _order_of(state, basis):
    if basis is not None:
        return basis.order
    d = state.u.shape[0]
    return {3: 1, 6: 2, 10: 3}[d]


def _sample(state, mesh, basis, center, ax):
    xx, yy = np.meshgrid(center[0] + ax, center[1] + ax)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    return evaluate(mesh, basis, state.u, pts).reshape(len(ax), len(ax))


def mixture(densities) -> DensityGrid:
    """Pointwise mean of densities that share one grid (summed in list order)."""
    densities = list(densities)
    if not densities:
        raise ParameterError("mixture needs at least one density")
    first = densities[0]
    acc = np.zeros_like(first.values)
    for dens in densities:
        if not first.same_geometry(dens):
            raise ParameterError("densities do not share a grid")
        acc += dens.values
    return DensityGrid(acc / len(densities), first.x.copy(), first.y.copy())


@dataclass(frozen=True)
class GaussianFit:
    mean: np.ndarray  # (2,)
    sigma: np.ndarray  # (2, 2), symmetric
    residual: float

    @property
    def sigma_xx(self):
        return float(self.sigma[0, 0])

    @property
    def sigma_xy(self):
        return float(self.sigma[0, 1])

    @property
    def sigma_yy(self):
        return float(self.sigma[1, 1])


def gaussian_pdf(x, y, mean, sigma):
    """Bivariate normal density with mean ``mean`` and covariance ``sigma``."""
    sigma = np.asarray(sigma, dtype=float)
    det = sigma[0, 0] * sigma[1, 1] - sigma[0, 1] * sigma[1, 0]
    inv = np.array([[sigma[1, 1], -sigma[0, 1]], [-sigma[1, 0], sigma[0, 0]]]) / det
    dx = np.asarray(x) - mean[0]
    dy = np.asarray(y) - mean[1]
    q = inv[0, 0] * dx * dx + 2 * inv[0, 1] * dx * dy + inv[1, 1] * dy * dy
    return np.exp(-0.5 * q) / (2 * math.pi * math.sqrt(det))


def fit_gaussian(density: DensityGrid, integral_tol=1e-6) -> GaussianFit:
    """Moment-matched Gaussian with midpoint-rule moments of the density grid.

    ``residual`` is the unnormalized sum of squared differences between the
    fitted Gaussian and the grid values over all nodes.
    """
    total = density.integral()
    if abs(total - 1.0) > integral_tol:
        raise ParameterError(f"density integrates to {total:.12g}, expected 1")
    u = density.values
    w = density.cell_area
    xx, yy = density.coordinates()
    mx = float(np.sum(u * xx) * w)
    my = float(np.sum(u * yy) * w)
    dx = xx - mx
    dy = yy - my
    sxx = float(np.sum(u * dx * dx) * w)
    syy = float(np.sum(u * dy * dy) * w)
    sxy = float(np.sum(u * dx * dy) * w)
    sigma = np.array([[sxx, sxy], [sxy, syy]])
    if not (sxx > 0 and syy > 0 and sxx * syy - sxy * sxy > 0):
        raise DegenerateFitError(f"covariance {sigma.tolist()} is not positive definite")
    mean = np.array([mx, my])
    residual = float(np.sum((gaussian_pdf(xx, yy, mean, sigma) - u) ** 2))
    return GaussianFit(mean, sigma, residual)


def analytic_free_sigma(k, T) -> np.ndarray:
    """Covariance ``2 k T I`` of free diffusion after time ``T``."""
    if k < 0 or T < 0:
        raise ParameterError("k and T must be non-negative")
    return np.eye(2) * (2.0 * k * T)


# --------------------------------------------------------------------------
# full scheme

@dataclass
class SchemeConfig:
    n: int = 400
    order: int = 1
    T: float = DEFAULT_T
    m: int = DEFAULT_M
    box_side: float = DEFAULT_BOX
    seed: int = 0
    cfl: float | None = None
    steps: int | None = None
    rk: str = "rk4"
    sigma0: float | None = None
    subtract_initial_covariance: bool = False
    centering: str = "seed"
    dump_per_seed_fields: bool = False
    workers: int | None = None
    backend: str | None = None

    def validate(self):
        if self.m < 1:
            raise ParameterError("m must be >= 1")
        if self.n < 2:
            raise ParameterError("n must be >= 2")
        if self.centering not in ("seed", "mean"):
            raise ParameterError(f"unknown centering {self.centering!r}")


@dataclass
class SchemeResult:
    fit: GaussianFit
    mixture: DensityGrid
    seeds: SeedSet
    densities: list = field(default_factory=list)
    seed_fits: list = field(default_factory=list)
    mass_drift: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    sigma0: float = 0.0
    solver: SolverConfig | None = None


def run_scheme(substrate, config: SchemeConfig, seeds: SeedSet | None = None,
               out_dir=None, keep_densities=False) -> SchemeResult:
    """Solve one heat problem per seed and fit a Gaussian to the mixture.

    ``seeds`` overrides sampling.  When ``out_dir`` is given the fit,
    the mixture grid and the seed list are written there.
    """
    config.validate()
    timings = {}
    t0 = time.perf_counter()
    mesh = assign_diffusivity(build_mesh(substrate.side, config.n, k0=substrate.k0), substrate)
    basis = make_basis(config.order)
    timings["mesh"] = time.perf_counter() - t0
    if seeds is None:
        seeds = sample_seeds(substrate, config.m, config.box_side, config.seed, mesh=mesh)
    solver = SolverConfig.for_mesh(
        mesh, config.T, order=config.order, cfl=config.cfl, steps=config.steps, rk=config.rk,
        workers=config.workers, backend=config.backend,
    )
    solver.check_stability(mesh)
    sigma0 = 2.0 * mesh.h if config.sigma0 is None else float(config.sigma0)

    densities, seed_fits, drift = [], [], []
    t_solve = t_fit = 0.0
    for i, x0 in enumerate(seeds.points):
        t1 = time.perf_counter()
        try:
            init = project_delta(mesh, basis, x0, sigma0)
            res = solve(mesh, basis, init, solver, record_every=max(solver.n_steps(), 1))
        except (NumericalError, ParameterError) as exc:
            raise type(exc)(f"seed {i} at {tuple(np.round(x0, 6))}: {exc}") from exc
        t2 = time.perf_counter()
        dens = center_normalize(res.state, x0, mesh, basis, centering=config.centering)
        densities.append(dens)
        seed_fits.append(fit_gaussian(dens))
        drift.append(abs(res.mass[-1] - res.mass[0]) / abs(res.mass[0]))
        t_solve += t2 - t1
        t_fit += time.perf_counter() - t2
        log.info("seed %d/%d solved in %.2fs", i + 1, seeds.m, t2 - t1)

    t3 = time.perf_counter()
    mix = mixture(densities)
    fit = fit_gaussian(mix)
    if config.subtract_initial_covariance:
        fit = GaussianFit(fit.mean, fit.sigma - sigma0**2 * np.eye(2), fit.residual)
    timings.update(solve=t_solve, fit=t_fit + time.perf_counter() - t3)
    result = SchemeResult(
        fit, mix, seeds, densities if keep_densities else [], seed_fits, drift, timings,
        sigma0, solver,
    )
    if out_dir is not None:
        write_scheme_outputs(out_dir, result, substrate, config, densities)
        textio.write_kv(Path(out_dir) / "timings.txt", timings, header="wall-clock seconds per phase")
    return result


def fit_record(fit: GaussianFit, m, T, k0, grid_n) -> dict:
    return {
        "mu_x": float(fit.mean[0]),
        "mu_y": float(fit.mean[1]),
        "sigma_xx": fit.sigma_xx,
        "sigma_xy": fit.sigma_xy,
        "sigma_yy": fit.sigma_yy,
        "residual": fit.residual,
        "m": int(m),
        "T": float(T),
        "k0": float(k0),
        "grid_n": int(grid_n),
    }


def write_scheme_outputs(out_dir, result: SchemeResult, substrate, config: SchemeConfig,
                         densities=()):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record = fit_record(result.fit, result.seeds.m, config.T, substrate.k0, config.n)
    record.update(
        sigma0=result.sigma0,
        initial_covariance_subtracted=config.subtract_initial_covariance,
        circles=len(substrate),
        substrate_sha256=substrate_digest(substrate),
    )
    textio.write_kv(out / "fit.txt", record,
                    header="Gaussian fit of the mixture density (um, um^2)")
    grid_header = _grid_header(result.mixture)
    textio.write_grid(out / "mixture.csv", result.mixture.values, header=grid_header)
    np.savetxt(out / "seeds.csv", np.asarray(result.seeds.points), delimiter=",", fmt="%.17g",
               header="x,y", comments="# ")
    if config.dump_per_seed_fields:
        for i, dens in enumerate(densities):
            textio.write_grid(out / f"density_seed{i:03d}.csv", dens.values, header=grid_header)


def _grid_header(grid: DensityGrid):
    return (
        f"density grid {grid.values.shape[1]}x{grid.values.shape[0]}, "
        f"x0={grid.x[0]:.17g} y0={grid.y[0]:.17g} spacing={grid.spacing:.17g}; rows = y"
    )


def read_density_grid(path) -> DensityGrid:
    values = textio.read_grid(path)
    with open(path, encoding="utf-8") as fh:
        head = fh.readline()
    fields = dict(tok.split("=") for tok in head.replace(";", " ").split() if "=" in tok)
    x0, y0, h = (float(fields[k]) for k in ("x0", "y0", "spacing"))
    ny, nx = values.shape
    return DensityGrid(values, x0 + h * np.arange(nx), y0 + h * np.arange(ny))
