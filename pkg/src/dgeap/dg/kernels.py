"""Element-parallel DG kernels.

Arrays are structure-of-arrays: coefficients ``u[j, e]`` for local dof ``j``
of element ``e``.  Every kernel writes only the columns of its own element
and reads the previous-stage data of that element and its three face
neighbors, so results do not depend on the number of threads.

The numba kernels are built per basis order with the unit-pixel operator
matrices frozen in as compile-time constants.  They walk the mesh pixel by
pixel (lower triangle ``2p``, upper ``2p + 1``), which fixes the element
shape statically.

Outer-square convention (``nbr == -1``): the ghost trace ``u+ = -u-``
makes the central u-flux vanish; ``q+ = q-`` and ``k+ = k-`` make the
q-flux equal to ``k- q- . n``.
"""

from functools import lru_cache

import numpy as np

from .._accel import HAVE_NUMBA, njit, prange


def face_coefficients(k, nbr):
    """Per-face q-flux weights ``kf[f, e]``.

    Interior faces get the harmonic mean ``2 k- k+ / (k- + k+)`` (0 if both
    vanish); outer faces get ``2 k-``, which with the 1/2 inside the face
    matrices yields the flux ``k- q- . n``.
    """
    km = k[None, :]
    kp = np.where(nbr >= 0, k[np.maximum(nbr, 0)], 0.0)
    ssum = km + kp
    harm = np.where(ssum > 0, 2.0 * km * kp / np.where(ssum > 0, ssum, 1.0), 0.0)
    return np.ascontiguousarray(np.where(nbr >= 0, harm, 2.0 * km))


class NumbaKernels:
    """Compiled kernels for one basis order."""

    def __init__(self, basis):
        VOL = np.ascontiguousarray(basis.volume)
        FS = np.ascontiguousarray(basis.face_self)
        FN = np.ascontiguousarray(basis.face_nbr)
        NRM = np.ascontiguousarray(basis.normals)
        D = basis.d

        @njit(inline="always")
        def elem_q(s, e, u, nbr, inv_h, qx, qy):
            for i in range(D):
                ax = 0.0
                ay = 0.0
                for j in range(D):
                    ax += VOL[s, 0, i, j] * u[j, e]
                    ay += VOL[s, 1, i, j] * u[j, e]
                for f in range(3):
                    nb = nbr[f, e]
                    if nb >= 0:
                        acc = 0.0
                        for j in range(D):
                            acc += FS[s, f, i, j] * u[j, e] + FN[s, f, i, j] * u[j, nb]
                        ax += NRM[s, f, 0] * acc
                        ay += NRM[s, f, 1] * acc
                qx[i, e] = ax * inv_h
                qy[i, e] = ay * inv_h

        @njit(inline="always")
        def elem_rhs(s, e, qx, qy, k, kf, nbr, inv_h, out):
            ke = k[e]
            for i in range(D):
                vol = 0.0
                for j in range(D):
                    vol += VOL[s, 0, i, j] * qx[j, e] + VOL[s, 1, i, j] * qy[j, e]
                acc = ke * vol
                for f in range(3):
                    c = kf[f, e]
                    if c == 0.0:
                        continue
                    nb = nbr[f, e]
                    fx = 0.0
                    fy = 0.0
                    if nb < 0:
                        for j in range(D):
                            fx += FS[s, f, i, j] * qx[j, e]
                            fy += FS[s, f, i, j] * qy[j, e]
                    else:
                        for j in range(D):
                            fx += FS[s, f, i, j] * qx[j, e] + FN[s, f, i, j] * qx[j, nb]
                            fy += FS[s, f, i, j] * qy[j, e] + FN[s, f, i, j] * qy[j, nb]
                    acc += c * (NRM[s, f, 0] * fx + NRM[s, f, 1] * fy)
                out[i, e] = acc * inv_h

        @njit(parallel=True)
        def weak_gradient(u, nbr, inv_h, qx, qy):
            npix = u.shape[1] // 2
            for p in prange(npix):
                elem_q(0, 2 * p, u, nbr, inv_h, qx, qy)
                elem_q(1, 2 * p + 1, u, nbr, inv_h, qx, qy)

        @njit(parallel=True)
        def flux_divergence(qx, qy, k, kf, nbr, inv_h, out):
            npix = qx.shape[1] // 2
            for p in prange(npix):
                elem_rhs(0, 2 * p, qx, qy, k, kf, nbr, inv_h, out)
                elem_rhs(1, 2 * p + 1, qx, qy, k, kf, nbr, inv_h, out)

        self.weak_gradient = weak_gradient
        self.flux_divergence = flux_divergence


@lru_cache(maxsize=None)
def numba_kernels(order):
    from .basis import make_basis

    if not HAVE_NUMBA:  # pragma: no cover
        raise RuntimeError("numba is not available")
    return NumbaKernels(make_basis(order))


@njit(parallel=True)
def axpy_numba(out, x, a, y):
    """out = x + a * y"""
    d, ne = x.shape
    for e in prange(ne):
        for i in range(d):
            out[i, e] = x[i, e] + a * y[i, e]


@njit(parallel=True)
def rk4_combine_numba(u, dt, k1, k2, k3, k4):
    """u += dt/6 (k1 + 2 k2 + 2 k3 + k4), in place."""
    d, ne = u.shape
    c = dt / 6.0
    for e in prange(ne):
        for i in range(d):
            u[i, e] = u[i, e] + c * (k1[i, e] + 2.0 * k2[i, e] + 2.0 * k3[i, e] + k4[i, e])


@njit(parallel=True)
def rk2_combine_numba(u, dt, k1, k2):
    """Heun: u += dt/2 (k1 + k2), in place."""
    d, ne = u.shape
    c = 0.5 * dt
    for e in prange(ne):
        for i in range(d):
            u[i, e] = u[i, e] + c * (k1[i, e] + k2[i, e])


class NumpyPlan:
    """Gather indices and face weights for the vectorized numpy path."""

    def __init__(self, nbr, shape, k, kf):
        self.groups = []
        for s in (0, 1):
            idx = np.flatnonzero(shape == s)
            nb = nbr[:, idx]
            interior = nb >= 0
            safe = np.where(interior, nb, idx[None, :])
            self.groups.append((s, idx, safe, interior, k[idx], kf[:, idx], interior.astype(float)))


def weak_gradient_numpy(u, plan, basis, inv_h, qx, qy):
    vol, fs, fn, nrm = basis.volume, basis.face_self, basis.face_nbr, basis.normals
    for s, idx, safe, interior, _, _, _ in plan.groups:
        us = u[:, idx]
        ax = vol[s, 0] @ us
        ay = vol[s, 1] @ us
        for f in range(3):
            acc = fs[s, f] @ us + fn[s, f] @ u[:, safe[f]]
            acc *= interior[f]
            ax += nrm[s, f, 0] * acc
            ay += nrm[s, f, 1] * acc
        qx[:, idx] = ax * inv_h
        qy[:, idx] = ay * inv_h


def flux_divergence_numpy(qx, qy, plan, basis, inv_h, out):
    vol, fs, fn, nrm = basis.volume, basis.face_self, basis.face_nbr, basis.normals
    for s, idx, safe, _, ke, kf, nbr_w in plan.groups:
        xs = qx[:, idx]
        ys = qy[:, idx]
        acc = ke * (vol[s, 0] @ xs + vol[s, 1] @ ys)
        for f in range(3):
            fx = fs[s, f] @ xs + nbr_w[f] * (fn[s, f] @ qx[:, safe[f]])
            fy = fs[s, f] @ ys + nbr_w[f] * (fn[s, f] @ qy[:, safe[f]])
            acc += kf[f] * (nrm[s, f, 0] * fx + nrm[s, f, 1] * fy)
        out[:, idx] = acc * inv_h
