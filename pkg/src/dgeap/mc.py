"""Monte Carlo random walk in the extracellular space, an independent check
on the DG covariance.

Walkers start uniformly in the extracellular part of a centered box and take
fixed-length steps in uniform random directions.  A step whose segment meets
a closed disk or leaves the domain square is rejected and the walker stays
put for that step.

Walkers are processed in blocks of ``BLOCK`` consecutive indices.  Block
``b`` draws its start points and all of its step angles from its own
generator, spawned from the master seed, so walker ``w`` always sees the
same random numbers whatever the worker count.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _accel, textio
from ._accel import njit, prange
from .errors import ParameterError, SamplingError
from .substrate import CircleGrid

log = logging.getLogger(__name__)

BLOCK = 1024
MAX_START_ATTEMPTS = 1_000_000
TRAJECTORY_WALKERS = 100


@dataclass(frozen=True)
class McConfig:
    """Random-walk parameters; lengths in micrometres, D in um^2/s."""

    D: float = 450.0
    t_s: float = 0.036
    T_steps: int = 5000
    n_walkers: int = 1_000_000
    seed: int = 0
    box_side: float = 20.0

    def __post_init__(self):
        if not (self.D > 0 and math.isfinite(self.D)):
            raise ParameterError(f"D must be positive, got {self.D}")
        if not (self.t_s > 0 and math.isfinite(self.t_s)):
            raise ParameterError(f"t_s must be positive, got {self.t_s}")
        if int(self.T_steps) != self.T_steps or self.T_steps < 1:
            raise ParameterError(f"T_steps must be an integer >= 1, got {self.T_steps}")
        if int(self.n_walkers) != self.n_walkers or self.n_walkers < 1:
            raise ParameterError(f"n_walkers must be an integer >= 1, got {self.n_walkers}")
        if not self.box_side > 0:
            raise ParameterError(f"box_side must be positive, got {self.box_side}")

    @property
    def step_length(self) -> float:
        """``l = sqrt(4 D t_s / T_steps)``"""
        return math.sqrt(4.0 * self.D * self.t_s / self.T_steps)


@dataclass
class McResult:
    covariance: np.ndarray  # (2, 2)
    mean: np.ndarray  # (2,)
    n_walkers: int
    stderr: np.ndarray  # (2, 2)
    rejected_fraction: float = 0.0
    config: McConfig | None = None
    trajectories: np.ndarray | None = field(default=None, repr=False)
    elapsed: float = 0.0

    @property
    def trace(self) -> float:
        return float(self.covariance[0, 0] + self.covariance[1, 1])


def covariance_with_stderr(disp):
    """Sample covariance of (N, 2) displacements and the standard error of each entry."""
    disp = np.asarray(disp, dtype=float)
    n = len(disp)
    mean = disp.mean(axis=0)
    c = disp - mean
    prod = c[:, :, None] * c[:, None, :]  # (N, 2, 2)
    cov = prod.sum(axis=0) / max(n - 1, 1)
    cov = 0.5 * (cov + cov.T)
    spread = prod.std(axis=0, ddof=1) if n > 1 else np.zeros((2, 2))
    return cov, mean, spread / math.sqrt(n)


# --------------------------------------------------------------------------
# kernels

@njit(inline="always")
def _blocked(x0, y0, x1, y1, cell, lo_x, lo_y, nx, ny, start, items, cx, cy, r2):
    i = int(math.floor((x0 - lo_x) / cell))
    j = int(math.floor((y0 - lo_y) / cell))
    if i < 0 or j < 0 or i >= nx or j >= ny:
        return False
    c = j * nx + i
    dx = x1 - x0
    dy = y1 - y0
    seg2 = dx * dx + dy * dy
    for s in range(start[c], start[c + 1]):
        q = items[s]
        px = cx[q] - x0
        py = cy[q] - y0
        t = (px * dx + py * dy) / seg2
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        ex = px - t * dx
        ey = py - t * dy
        if ex * ex + ey * ey <= r2[q]:
            return True
    return False


@njit(parallel=True)
def _walk_block_numba(pos, cos_t, sin_t, step, side, cell, lo_x, lo_y, nx, ny,
                      start, items, cx, cy, r2, rejected, traj):
    nw, nsteps = cos_t.shape
    ntraj = traj.shape[0]
    for w in prange(nw):
        x = pos[w, 0]
        y = pos[w, 1]
        rej = 0
        if w < ntraj:
            traj[w, 0, 0] = x
            traj[w, 0, 1] = y
        for s in range(nsteps):
            xn = x + step * cos_t[w, s]
            yn = y + step * sin_t[w, s]
            if xn < 0.0 or yn < 0.0 or xn > side or yn > side or _blocked(
                x, y, xn, yn, cell, lo_x, lo_y, nx, ny, start, items, cx, cy, r2
            ):
                rej += 1
            else:
                x = xn
                y = yn
            if w < ntraj:
                traj[w, s + 1, 0] = x
                traj[w, s + 1, 1] = y
        pos[w, 0] = x
        pos[w, 1] = y
        rejected[w] = rej


def _walk_block_numpy(pos, cos_t, sin_t, step, side, grid, rejected, traj):
    nw, nsteps = cos_t.shape
    ntraj = traj.shape[0]
    if ntraj:
        traj[:, 0] = pos[:ntraj]
    for s in range(nsteps):
        cand = np.empty_like(pos)
        cand[:, 0] = pos[:, 0] + step * cos_t[:, s].astype(np.float64)
        cand[:, 1] = pos[:, 1] + step * sin_t[:, s].astype(np.float64)
        bad = np.any((cand < 0.0) | (cand > side), axis=1)
        if grid is not None:
            bad |= _segment_hits(grid, pos, cand)
        rejected += bad
        np.copyto(pos, cand, where=~bad[:, None])
        if ntraj:
            traj[:, s + 1] = pos[:ntraj]


def _segment_hits(grid, p0, p1):
    cell, inside = grid.cell_of(p0)
    counts = grid.start[cell + 1] - grid.start[cell]
    counts[~inside] = 0
    out = np.zeros(len(p0), dtype=bool)
    d = p1 - p0
    seg2 = (d * d).sum(axis=1)
    for slot in range(int(counts.max()) if len(counts) else 0):
        live = np.flatnonzero(counts > slot)
        q = grid.items[grid.start[cell[live]] + slot]
        rel = grid.centers[q] - p0[live]
        t = np.clip((rel * d[live]).sum(axis=1) / seg2[live], 0.0, 1.0)
        e = rel - t[:, None] * d[live]
        out[live[(e * e).sum(axis=1) <= grid.radii[q] ** 2]] = True
    return out


# --------------------------------------------------------------------------
# driver

def sample_starts(substrate, n, box_side, rng, max_attempts=MAX_START_ATTEMPTS):
    """``n`` uniform extracellular points in the centered box, drawn from ``rng``."""
    if box_side > substrate.side:
        raise ParameterError(f"box_side {box_side} exceeds the domain side {substrate.side}")
    lo = np.asarray(substrate.center) - 0.5 * box_side
    out = np.empty((n, 2))
    filled = 0
    misses = 0  # consecutive rejected draws
    batch = max(2 * n, 256)
    while filled < n:
        cand = lo + box_side * rng.random((batch, 2))
        ok = np.flatnonzero(~substrate.contains_axon_many(cand))
        if ok.size == 0:
            misses += batch
        else:
            misses = batch - 1 - ok[-1]
            take = ok[: n - filled]
            out[filled:filled + take.size] = cand[take]
            filled += take.size
        if misses >= max_attempts:
            raise SamplingError(f"no extracellular start found in {misses} consecutive draws")
    return out


def walk(substrate, config: McConfig, workers=None, backend=None,
         trajectories=0, starts=None) -> McResult:
    """Run the random walk and return the displacement covariance.

    ``trajectories`` walkers (from index 0, at most one block) also have
    every position recorded.  ``starts`` replaces the uniform start points
    with an explicit ``(n_walkers, 2)`` array, e.g. many walkers per seed.
    """
    backend = _accel.resolve_backend(backend)
    _accel.set_workers(workers)
    t0 = time.perf_counter()
    step = config.step_length
    side = float(substrate.side)
    grid = None
    if len(substrate):
        # fine buckets: a walker tests only disks within one step of its cell
        cell = max(3.0 * step, side / 2000.0)
        grid = CircleGrid(substrate.centers, substrate.radii, cell=cell, pad=step)
        flat = (
            grid.cell, float(grid.origin[0]), float(grid.origin[1]),
            int(grid.shape[0]), int(grid.shape[1]), grid.start, grid.items,
            np.ascontiguousarray(grid.centers[:, 0]), np.ascontiguousarray(grid.centers[:, 1]),
            grid.radii**2,
        )
    else:
        empty_i = np.zeros(2, dtype=np.int64)
        flat = (1.0, 0.0, 0.0, 0, 0, empty_i, empty_i, np.zeros(1), np.zeros(1), np.zeros(1))

    n = int(config.n_walkers)
    if starts is not None:
        starts = np.asarray(starts, dtype=float)
        if starts.shape != (n, 2):
            raise ParameterError(f"starts must have shape ({n}, 2), got {starts.shape}")
        if substrate.contains_axon_many(starts).any():
            raise ParameterError("a start point lies inside an axon")
    nsteps = int(config.T_steps)
    nblocks = -(-n // BLOCK)
    streams = np.random.SeedSequence(config.seed).spawn(nblocks)
    disp = np.empty((n, 2))
    rejected = np.zeros(n, dtype=np.int64)
    ntraj = min(int(trajectories), n, BLOCK)
    traj_all = np.zeros((ntraj, nsteps + 1, 2))
    for b, ss in enumerate(streams):
        lo, hi = b * BLOCK, min((b + 1) * BLOCK, n)
        rng = np.random.default_rng(ss)
        if starts is None:
            start = sample_starts(substrate, hi - lo, config.box_side, rng)
        else:
            start = starts[lo:hi]
        # single precision keeps trig cheap; the direction error (~1e-7) is
        # far below the statistical noise
        theta = rng.random((hi - lo, nsteps), dtype=np.float32) * np.float32(2.0 * math.pi)
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        del theta
        pos = start.copy()
        rej = np.zeros(hi - lo, dtype=np.int64)
        traj = traj_all if b == 0 else traj_all[:0]
        if backend == "numba":
            _walk_block_numba(pos, cos_t, sin_t, step, side, *flat, rej, traj)
        else:
            _walk_block_numpy(pos, cos_t, sin_t, step, side, grid, rej, traj)
        disp[lo:hi] = pos - start
        rejected[lo:hi] = rej
    cov, mean, se = covariance_with_stderr(disp)
    elapsed = time.perf_counter() - t0
    log.info("walked %d walkers x %d steps in %.1fs", n, nsteps, elapsed)
    return McResult(
        cov, mean, n, se, float(rejected.sum()) / (n * nsteps), config,
        traj_all if ntraj else None, elapsed,
    )


def result_record(result: McResult) -> dict:
    cfg = result.config
    rec = {
        "cov_xx": float(result.covariance[0, 0]),
        "cov_xy": float(result.covariance[0, 1]),
        "cov_yy": float(result.covariance[1, 1]),
        "se_xx": float(result.stderr[0, 0]),
        "se_xy": float(result.stderr[0, 1]),
        "se_yy": float(result.stderr[1, 1]),
        "mean_x": float(result.mean[0]),
        "mean_y": float(result.mean[1]),
        "walkers": result.n_walkers,
        "rejected_fraction": result.rejected_fraction,
    }
    if cfg is not None:
        rec.update(
            D=cfg.D, t_s=cfg.t_s, T_steps=cfg.T_steps, n_walkers=cfg.n_walkers,
            seed=cfg.seed, box_side=cfg.box_side, step_length=cfg.step_length,
        )
    return rec


def write_result(path, result: McResult, extra=None):
    rec = result_record(result)
    rec.update(extra or {})
    textio.write_kv(path, rec, header="Monte Carlo displacement covariance (um^2)")


def read_result(path) -> dict:
    return textio.read_kv(path)


def write_trajectories(path, traj):
    """CSV with columns walker, step, x, y."""
    nw, ns, _ = traj.shape
    w, s = np.meshgrid(np.arange(nw), np.arange(ns), indexing="ij")
    table = np.column_stack([w.ravel(), s.ravel(), traj[:, :, 0].ravel(), traj[:, :, 1].ravel()])
    np.savetxt(path, table, delimiter=",", fmt=["%d", "%d", "%.17g", "%.17g"],
               header="walker,step,x,y", comments="")
