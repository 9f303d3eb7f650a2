"""Lagrange bases on the reference triangle and per-shape DG operators.

The reference triangle has vertices (0,0), (1,0), (0,1).  Because every
physical element is one of two right triangles of leg ``h``, all local
matrices are precomputed once for a unit pixel; the operators used by the
kernels scale as ``1/h``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import ParameterError
from ..mesh import EDGE_NORMALS, NEIGHBOR_EDGE, REF_VERTICES

# pixel offset of the neighbor across (shape, edge), unit pixel
_NEIGHBOR_OFFSET = np.array(
    [
        [[0.0, -1.0], [1.0, 0.0], [0.0, 0.0]],
        [[0.0, 0.0], [0.0, 1.0], [-1.0, 0.0]],
    ]
)


def line_quadrature(npts: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def triangle_quadrature(degree: int):
    """Collapsed (Duffy) Gauss rule on the reference triangle, exact to ``degree``.

    Returns points of shape (nq, 2) and weights summing to 1/2.
    """
    npts = max(degree // 2 + 2, 1)
    s, ws = line_quadrature(npts)
    a, b = np.meshgrid(s, s, indexing="ij")
    wa, wb = np.meshgrid(ws, ws, indexing="ij")
    x = a.ravel()
    y = (b * (1.0 - a)).ravel()
    w = (wa * wb * (1.0 - a)).ravel()
    return np.column_stack([x, y]), w


def _exponents(p):
    return [(i, j) for j in range(p + 1) for i in range(p + 1 - j)]


def lagrange_nodes(p: int) -> np.ndarray:
    """Equispaced nodes ``(i/p, j/p)``, ``i + j <= p``; vertices come first for p=1."""
    return np.array([(i / p, j / p) for i, j in _exponents(p)])


@dataclass(frozen=True, eq=False)
class Basis:
    """Lagrange basis of total degree ``order`` plus precomputed unit-pixel operators.

    Operator arrays (all for a unit pixel, divide by ``h`` for a physical mesh):

    ``volume[s, dim]``
        ``-M^{-1} S_dim`` with ``S_dim[i, j] = int N_j dN_i/dx_dim``.
    ``face_self[s, f]``, ``face_nbr[s, f]``
        ``M^{-1} (1/2) int_edge N_i N_j`` with ``N_j`` taken from the element
        itself or from the neighbor across edge ``f``.
    """

    order: int
    nodes: np.ndarray
    coeffs: np.ndarray
    exponents: tuple
    mass_ref: np.ndarray
    volume: np.ndarray
    face_self: np.ndarray
    face_nbr: np.ndarray
    normals: np.ndarray
    integrals: np.ndarray  # int_K N_j on a unit pixel triangle, per shape

    @property
    def d(self) -> int:
        return len(self.nodes)

    def eval(self, xi) -> np.ndarray:
        """Shape function values at reference points, shape (npts, d)."""
        xi = np.atleast_2d(xi)
        mono = np.stack([xi[:, 0] ** i * xi[:, 1] ** j for i, j in self.exponents], axis=1)
        return mono @ self.coeffs

    def grad(self, xi) -> np.ndarray:
        """Reference gradients, shape (npts, d, 2)."""
        xi = np.atleast_2d(xi)
        x, y = xi[:, 0], xi[:, 1]
        dx = np.stack(
            [i * x ** max(i - 1, 0) * y**j if i else 0.0 * x for i, j in self.exponents], axis=1
        )
        dy = np.stack(
            [j * x**i * y ** max(j - 1, 0) if j else 0.0 * x for i, j in self.exponents], axis=1
        )
        return np.stack([dx @ self.coeffs, dy @ self.coeffs], axis=2)


def jacobian(shape: int, h: float = 1.0) -> np.ndarray:
    """Affine map matrix ``J`` with ``x = v0 + J xi`` for the given element shape."""
    v = REF_VERTICES[shape] * h
    return np.column_stack([v[1] - v[0], v[2] - v[0]])


def to_reference(shape, origin, points, h=1.0):
    """Reference coordinates of physical ``points`` in an element of ``shape``."""
    J = jacobian(shape, h)
    return np.linalg.solve(J, (np.atleast_2d(points) - origin).T).T


@lru_cache(maxsize=None)
def make_basis(order: int) -> Basis:
    if order not in (1, 2, 3):
        raise ParameterError(f"basis order must be 1, 2 or 3, got {order}")
    exps = _exponents(order)
    nodes = lagrange_nodes(order)
    vdm = np.stack([nodes[:, 0] ** i * nodes[:, 1] ** j for i, j in exps], axis=1)
    coeffs = np.linalg.inv(vdm)
    proto = Basis(order, nodes, coeffs, tuple(exps), None, None, None, None, None, None)
    d = len(nodes)

    qp, qw = triangle_quadrature(2 * order + 2)
    phi = proto.eval(qp)
    dphi = proto.grad(qp)
    mass_ref = np.einsum("q,qi,qj->ij", qw, phi, phi)
    ref_integrals = phi.T @ qw

    sp, sw = line_quadrature(order + 1)
    volume = np.empty((2, 2, d, d))
    face_self = np.empty((2, 3, d, d))
    face_nbr = np.empty((2, 3, d, d))
    integrals = np.empty((2, d))
    for s in (0, 1):
        J = jacobian(s)
        detJ = abs(np.linalg.det(J))
        Jinv = np.linalg.inv(J)
        minv = np.linalg.inv(detJ * mass_ref)
        integrals[s] = detJ * ref_integrals
        gphys = np.einsum("qia,ab->qib", dphi, Jinv)  # dN_i/dx_b
        for dim in (0, 1):
            S = detJ * np.einsum("q,qj,qi->ij", qw, phi, gphys[:, :, dim])
            volume[s, dim] = -minv @ S
        verts = REF_VERTICES[s]
        for f in range(3):
            a, b = verts[f], verts[(f + 1) % 3]
            pts = a + sp[:, None] * (b - a)
            length = np.linalg.norm(b - a)
            own = proto.eval(to_reference(s, np.zeros(2), pts))
            ns = NEIGHBOR_EDGE[s, f, 0]
            nb = proto.eval(to_reference(ns, _NEIGHBOR_OFFSET[s, f], pts))
            w = 0.5 * length * sw
            face_self[s, f] = minv @ np.einsum("q,qi,qj->ij", w, own, own)
            face_nbr[s, f] = minv @ np.einsum("q,qi,qj->ij", w, own, nb)
    arrays = dict(
        mass_ref=mass_ref,
        volume=volume,
        face_self=face_self,
        face_nbr=face_nbr,
        normals=EDGE_NORMALS.copy(),
        integrals=integrals,
    )
    for a in arrays.values():
        a.setflags(write=False)
    return Basis(order, nodes, coeffs, tuple(exps), **arrays)
