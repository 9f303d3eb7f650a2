"""DG solution of the heat equation with piecewise-constant diffusivity.

Mixed form ``q = grad u``, ``u_t = div(k q)`` on the pixel triangulation,
with a central flux for ``u`` and a harmonic-mean weighted central flux
for ``q``.  Time stepping is explicit Runge-Kutta with a fixed step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import _accel
from ..errors import InstabilityError, ParameterError
from . import kernels
from .basis import Basis, jacobian, make_basis, to_reference, triangle_quadrature

#: Largest admissible ``k dt / h^2`` for any scheme (explicit diffusion bound).
MAX_CFL = 0.25
RK_SCHEMES = ("rk4", "rk2")

#: Upper bounds of ``|eigenvalue| h^2 / k`` of the semi-discrete operator,
#: from Arnoldi on refined free meshes (axons only lower it).
SPECTRAL_RADIUS = {1: 60.0, 2: 193.0, 3: 463.0}
#: Extent of each RK stability region along the negative real axis.
RK_REAL_EXTENT = {"rk4": 2.785, "rk2": 2.0}
#: Default ``k dt / h^2`` per (scheme, order), inside the stable range.
DEFAULT_CFL = {
    ("rk4", 1): 0.04, ("rk4", 2): 0.0125, ("rk4", 3): 0.005,
    ("rk2", 1): 0.03, ("rk2", 2): 0.009, ("rk2", 3): 0.004,
}


def max_stable_cfl(order, rk="rk4"):
    """Largest ``k dt / h^2`` inside the RK stability region for this basis."""
    return RK_REAL_EXTENT[rk] / SPECTRAL_RADIUS[order]


def flux_u(u_minus, u_plus):
    """Central flux value ``(u- + u+)/2``; the caller multiplies by the normal."""
    return 0.5 * (u_minus + u_plus)


def flux_k(k_minus, k_plus):
    """Harmonic-mean diffusivity ``2 k- k+ / (k- + k+)``, zero when both vanish."""
    if k_minus < 0 or k_plus < 0:
        raise ParameterError(f"diffusivities must be non-negative, got {k_minus}, {k_plus}")
    s = k_minus + k_plus
    if s == 0:
        return 0.0
    return 2.0 * k_minus * k_plus / s


@dataclass
class FieldState:
    """Coefficients ``u[j, e]`` of the scalar unknown at time ``t`` (seconds)."""

    u: np.ndarray
    t: float = 0.0

    def copy(self):
        return FieldState(self.u.copy(), self.t)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.u)))


@dataclass
class AuxField:
    """Coefficients of the weak gradient ``q = (qx, qy)``."""

    qx: np.ndarray
    qy: np.ndarray


@dataclass(frozen=True)
class SolverConfig:
    order: int = 1
    dt: float = 0.0
    T: float = 0.0
    cfl_limit: float = MAX_CFL
    rk: str = "rk4"
    workers: int | None = None
    backend: str | None = None

    def __post_init__(self):
        if self.order not in (1, 2, 3):
            raise ParameterError(f"order must be 1, 2 or 3, got {self.order}")
        if self.rk not in RK_SCHEMES:
            raise ParameterError(f"rk must be one of {RK_SCHEMES}, got {self.rk!r}")
        if not (0 < self.cfl_limit <= MAX_CFL):
            raise ParameterError(f"cfl_limit must be in (0, {MAX_CFL}], got {self.cfl_limit}")
        if self.T < 0 or not math.isfinite(self.T):
            raise ParameterError(f"T must be finite and >= 0, got {self.T}")
        if not self.dt > 0:
            raise ParameterError(f"dt must be positive, got {self.dt}")

    @classmethod
    def for_mesh(cls, mesh, T, order=1, cfl=None, steps=None, rk="rk4", **kw):
        """Config whose dt is ``cfl h^2 / k_max`` (or ``T / steps`` if given)."""
        kmax = float(np.max(mesh.k))
        if steps is not None and T > 0:
            if steps < 1:
                raise ParameterError(f"steps must be >= 1, got {steps}")
            dt = T / steps
        else:
            cfl = DEFAULT_CFL[(rk, order)] if cfl is None else cfl
            dt = cfl * mesh.h**2 / kmax
        return cls(order=order, dt=dt, T=T, rk=rk, **kw)

    def cfl(self, mesh):
        return self.dt * float(np.max(mesh.k)) / mesh.h**2

    def check_stability(self, mesh):
        """Reject dt outside ``cfl_limit`` or outside the RK stability region."""
        kmax = float(np.max(mesh.k))
        if kmax <= 0:
            return
        cfl = self.dt * kmax / mesh.h**2
        bound = min(self.cfl_limit, max_stable_cfl(self.order, self.rk))
        # relative slack absorbs dt = T/steps rounding
        if cfl > bound * (1 + 1e-12):
            raise ParameterError(
                f"dt={self.dt:.6g} s gives k dt/h^2 = {cfl:.4g}, above the stability bound "
                f"{bound:.4g} for {self.rk} at order {self.order}"
            )

    def n_steps(self):
        if self.T == 0:
            return 0
        return max(int(math.ceil(self.T / self.dt * (1 - 1e-12))), 1)


class DGOperator:
    """Semi-discrete operator ``du/dt = L u`` on a fixed mesh."""

    def __init__(self, mesh, basis: Basis, backend=None):
        self.mesh = mesh
        self.basis = basis
        self.backend = _accel.resolve_backend(backend)
        self.inv_h = 1.0 / mesh.h
        self.nbr = np.ascontiguousarray(mesh.neighbors)
        self.shape = np.ascontiguousarray(mesh.shape)
        self.k = np.ascontiguousarray(mesh.k)
        self.kf = kernels.face_coefficients(self.k, self.nbr)
        if not (np.all(self.shape[0::2] == 0) and np.all(self.shape[1::2] == 1)):
            raise ParameterError("kernels require lower/upper triangles interleaved by pixel")
        if self.backend == "numba":
            self._kern = kernels.numba_kernels(basis.order)
        else:
            self._plan = kernels.NumpyPlan(self.nbr, self.shape, self.k, self.kf)
        d, ne = basis.d, mesh.n_elements
        self.qx = np.zeros((d, ne))
        self.qy = np.zeros((d, ne))
        self.weights = basis.integrals[self.shape].T * mesh.h**2  # int_K N_j, (d, ne)

    def zeros(self):
        return np.zeros((self.basis.d, self.mesh.n_elements))

    def compute_q(self, u, qx=None, qy=None):
        qx = self.qx if qx is None else qx
        qy = self.qy if qy is None else qy
        b = self.basis
        if self.backend == "numba":
            self._kern.weak_gradient(u, self.nbr, self.inv_h, qx, qy)
        else:
            kernels.weak_gradient_numpy(u, self._plan, b, self.inv_h, qx, qy)
        return qx, qy

    def compute_rhs(self, qx, qy, out=None):
        out = self.zeros() if out is None else out
        b = self.basis
        if self.backend == "numba":
            self._kern.flux_divergence(qx, qy, self.k, self.kf, self.nbr, self.inv_h, out)
        else:
            kernels.flux_divergence_numpy(qx, qy, self._plan, b, self.inv_h, out)
        return out

    def apply(self, u, out=None):
        qx, qy = self.compute_q(u)
        return self.compute_rhs(qx, qy, out)

    def mass(self, u) -> float:
        """Total discrete mass ``int u``, summed in a fixed order."""
        return float(np.sum(self.weights * u))

    def element_means(self, u):
        return (self.weights * u).sum(axis=0) / self.mesh.element_area


def compute_q(state: FieldState, mesh, basis: Basis, backend=None) -> AuxField:
    op = DGOperator(mesh, basis, backend)
    qx, qy = op.compute_q(state.u, np.zeros_like(state.u), np.zeros_like(state.u))
    return AuxField(qx, qy)


def compute_rhs(state: FieldState, q: AuxField, mesh, basis: Basis, backend=None) -> np.ndarray:
    return DGOperator(mesh, basis, backend).compute_rhs(q.qx, q.qy)


class RungeKutta:
    """Fixed-step explicit RK driver reusing its stage buffers."""

    def __init__(self, op: DGOperator, scheme="rk4"):
        if scheme not in RK_SCHEMES:
            raise ParameterError(f"unknown RK scheme {scheme!r}")
        self.op = op
        self.scheme = scheme
        nstage = 4 if scheme == "rk4" else 2
        self.k = [op.zeros() for _ in range(nstage)]
        self.tmp = op.zeros()

    def _axpy(self, out, x, a, y):
        if self.op.backend == "numba":
            kernels.axpy_numba(out, x, a, y)
        else:
            np.multiply(y, a, out=out)
            out += x
        return out

    def step(self, u, dt):
        """Advance ``u`` in place by ``dt``."""
        op, k, tmp = self.op, self.k, self.tmp
        if self.scheme == "rk4":
            op.apply(u, k[0])
            op.apply(self._axpy(tmp, u, 0.5 * dt, k[0]), k[1])
            op.apply(self._axpy(tmp, u, 0.5 * dt, k[1]), k[2])
            op.apply(self._axpy(tmp, u, dt, k[2]), k[3])
            if op.backend == "numba":
                kernels.rk4_combine_numba(u, dt, k[0], k[1], k[2], k[3])
            else:
                u += (dt / 6.0) * (k[0] + 2.0 * k[1] + 2.0 * k[2] + k[3])
        else:
            op.apply(u, k[0])
            op.apply(self._axpy(tmp, u, dt, k[0]), k[1])
            if op.backend == "numba":
                kernels.rk2_combine_numba(u, dt, k[0], k[1])
            else:
                u += (0.5 * dt) * (k[0] + k[1])
        return u


def step(state: FieldState, mesh, basis: Basis, config: SolverConfig, dt=None) -> FieldState:
    """One explicit RK step; returns a new state at ``t + dt``."""
    config.check_stability(mesh)
    dt = config.dt if dt is None else dt
    _accel.set_workers(config.workers)
    rk = RungeKutta(DGOperator(mesh, basis, config.backend), config.rk)
    u = state.u.copy()
    rk.step(u, dt)
    new = FieldState(u, state.t + dt)
    if not new.is_finite():
        raise InstabilityError(f"non-finite coefficients after step ending at t={new.t:.6g} s", new.t)
    return new


@dataclass
class SolveResult:
    state: FieldState
    times: np.ndarray
    mass: np.ndarray
    boundary_peak_ratio: np.ndarray = field(default=None)
    steps: int = 0


def boundary_elements(mesh) -> np.ndarray:
    return np.flatnonzero(np.any(mesh.neighbors < 0, axis=0))


def solve(mesh, basis: Basis, initial: FieldState, config: SolverConfig,
          record_every=1, callback=None) -> SolveResult:
    """Step from ``initial`` to ``config.T``; the last step is shortened to land on T.

    ``mass`` holds the total mass after every ``record_every`` steps (and at
    the end), ``boundary_peak_ratio`` the max |u| on outer-boundary elements
    relative to the global max at the same instants.
    """
    config.check_stability(mesh)
    _accel.set_workers(config.workers)
    op = DGOperator(mesh, basis, config.backend)
    rk = RungeKutta(op, config.rk)
    u = initial.u.copy()
    t0 = initial.t
    bnd = boundary_elements(mesh)

    def probe(u):
        peak = float(np.max(np.abs(u)))
        edge = float(np.max(np.abs(u[:, bnd]))) if bnd.size else 0.0
        return op.mass(u), (edge / peak if peak > 0 else 0.0)

    m0, b0 = probe(u)
    times, masses, ratios = [t0], [m0], [b0]
    nsteps = config.n_steps()
    for n in range(1, nsteps + 1):
        dt = config.dt if n < nsteps else config.T - (nsteps - 1) * config.dt
        rk.step(u, dt)
        t = t0 + (config.dt * n if n < nsteps else config.T)
        # a NaN or inf anywhere poisons the sum, so this is a cheap full check
        if not math.isfinite(float(np.sum(u))):
            raise InstabilityError(f"non-finite coefficients at t={t:.6g} s", t)
        if n % record_every == 0 or n == nsteps:
            m, b = probe(u)
            times.append(t)
            masses.append(m)
            ratios.append(b)
        if callback is not None:
            callback(n, t, u)
    return SolveResult(
        FieldState(u, t0 + config.T if nsteps else t0),
        np.array(times), np.array(masses), np.array(ratios), nsteps,
    )


# --------------------------------------------------------------------------
# initial data and point evaluation

def project_delta(mesh, basis: Basis, x0, sigma0=None, extracellular_only=True) -> FieldState:
    """L2 projection of a unit-mass Gaussian bump standing in for a Dirac delta.

    The bump has standard deviation ``sigma0`` (default ``2 h``), is cut off
    at ``6 sigma0`` and is projected element by element.  Elements with
    ``k = 0`` receive no data when ``extracellular_only``.  The result is
    rescaled so that its discrete mass is exactly 1.
    """
    x0 = np.asarray(x0, dtype=float).reshape(2)
    h = mesh.h
    sigma0 = 2.0 * h if sigma0 is None else float(sigma0)
    if sigma0 < 2.0 * h * (1 - 1e-12):
        raise ParameterError(f"sigma0={sigma0} must be >= 2h = {2 * h}")
    if np.any(x0 < 0) or np.any(x0 > mesh.side):
        raise ParameterError(f"point {tuple(x0)} outside the domain")
    e0 = mesh.locate(x0)[0]
    if mesh.k[e0] == 0:
        raise ParameterError(f"point {tuple(x0)} lies inside an axon")

    cut = 6.0 * sigma0
    i0 = max(int(math.floor((x0[0] - cut) / h)), 0)
    i1 = min(int(math.floor((x0[0] + cut) / h)), mesh.n - 1)
    j0 = max(int(math.floor((x0[1] - cut) / h)), 0)
    j1 = min(int(math.floor((x0[1] + cut) / h)), mesh.n - 1)
    jj, ii = np.meshgrid(np.arange(j0, j1 + 1), np.arange(i0, i1 + 1), indexing="ij")
    pix = (jj * mesh.n + ii).ravel()
    origins = np.column_stack([ii.ravel() * h, jj.ravel() * h])

    qp, qw = triangle_quadrature(12)
    phi = basis.eval(qp)  # (nq, d)
    minv_ref = np.linalg.inv(basis.mass_ref)
    u = np.zeros((basis.d, mesh.n_elements))

    for s in (0, 1):
        J = jacobian(s, h)
        pts = origins[:, None, :] + qp @ J.T  # (npix, nq, 2)
        r2 = ((pts - x0) ** 2).sum(-1)
        g = np.exp(-0.5 * r2 / sigma0**2) / (2.0 * math.pi * sigma0**2)
        g[r2 > cut * cut] = 0.0
        # local L2 projection: M^{-1} int g N_i
        rhs = (g * qw) @ phi  # (npix, d), reference measure
        coef = rhs @ minv_ref.T  # detJ cancels between M and the load
        e = 2 * pix + s
        u[:, e] = coef.T
    if extracellular_only:
        u[:, mesh.k == 0] = 0.0
    op_w = basis.integrals[mesh.shape].T * h**2
    total = float(np.sum(op_w * u))
    if not total > 0:
        raise ParameterError("projected bump has no extracellular mass")
    u /= total
    return FieldState(u, 0.0)


def interpolate(mesh, basis: Basis, f) -> np.ndarray:
    """Nodal interpolant of ``f(points) -> values`` (points shaped (..., 2))."""
    org = mesh.pixel_origin()
    u = np.empty((basis.d, mesh.n_elements))
    for s in (0, 1):
        idx = np.flatnonzero(mesh.shape == s)
        pts = org[idx][None, :, :] + (basis.nodes @ jacobian(s, mesh.h).T)[:, None, :]
        u[:, idx] = f(pts)
    return u


def evaluate(mesh, basis: Basis, u, points, average_diagonal=True) -> np.ndarray:
    """Point values of the broken polynomial field.

    Points outside the domain evaluate to 0.  A point on a pixel diagonal
    takes the mean of the two adjacent triangles when ``average_diagonal``.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    out = np.zeros(len(points))
    e = mesh.locate(points)
    inside = e >= 0
    pts = points[inside]
    ee = e[inside]
    vals = _eval_in(mesh, basis, u, ee, pts)
    if average_diagonal:
        s = pts / mesh.h
        frac = s - np.floor(s)
        on_diag = np.isclose(frac[:, 0], frac[:, 1], rtol=0, atol=1e-12) & (mesh.shape[ee] == 0)
        if np.any(on_diag):
            other = ee[on_diag] + 1
            vals[on_diag] = 0.5 * (vals[on_diag] + _eval_in(mesh, basis, u, other, pts[on_diag]))
    out[inside] = vals
    return out


def _eval_in(mesh, basis, u, elements, points):
    origin = mesh.pixel_origin()[elements] if len(elements) else np.zeros((0, 2))
    vals = np.empty(len(elements))
    for s in (0, 1):
        sel = mesh.shape[elements] == s
        if not np.any(sel):
            continue
        xi = to_reference(s, origin[sel], points[sel], mesh.h)
        phi = basis.eval(xi)
        vals[sel] = np.einsum("pj,jp->p", phi, u[:, elements[sel]])
    return vals


def pixel_means(mesh, basis: Basis, u) -> np.ndarray:
    """Average of the two triangle means per pixel, shape (n, n), row index = y."""
    w = basis.integrals[mesh.shape].T * mesh.h**2
    tri = (w * u).sum(axis=0) / mesh.element_area
    return tri.reshape(mesh.n, mesh.n, 2).mean(axis=2)


