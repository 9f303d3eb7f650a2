"""Uniform pixel triangulation of the square domain.

Each of the ``n x n`` pixels is cut along its lower-left to upper-right
diagonal into a *lower* triangle (shape 0) and an *upper* triangle
(shape 1).  Element ids are row-major by pixel, lower before upper::

    e = 2 * (j * n + i) + shape        # pixel column i (x), row j (y)

Local vertices and edges, counter-clockwise, edge ``f`` runs from vertex
``f`` to vertex ``f + 1``::

    lower:  v0=(0,0) v1=(h,0) v2=(h,h)   edges: bottom, right, diagonal
    upper:  v0=(0,0) v1=(h,h) v2=(0,h)   edges: diagonal, top, left

Element data are stored structure-of-arrays: ``neighbors[f, e]``,
``k[e]``, ``shape[e]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError

#: Marker in the neighbor table for an edge on the outer square.
OUTER_BOUNDARY = -1

#: Reference vertices (unit pixel) per shape, shape (2, 3, 2).
REF_VERTICES = np.array(
    [
        [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
        [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
    ]
)

_S = 1.0 / math.sqrt(2.0)
#: Outward unit normals per (shape, edge), shape (2, 3, 2).
EDGE_NORMALS = np.array(
    [
        [[0.0, -1.0], [1.0, 0.0], [-_S, _S]],
        [[_S, -_S], [0.0, 1.0], [-1.0, 0.0]],
    ]
)
#: Edge lengths on a unit pixel per (shape, edge).
EDGE_LENGTHS = np.array([[1.0, 1.0, math.sqrt(2.0)], [math.sqrt(2.0), 1.0, 1.0]])

#: For (shape, edge): the (shape, edge) seen from the neighbor across it.
NEIGHBOR_EDGE = np.array(
    [
        [[1, 1], [1, 2], [1, 0]],
        [[0, 2], [0, 0], [0, 1]],
    ]
)


@dataclass(frozen=True, eq=False)
class StructuredTriMesh:
    side: float
    n: int
    neighbors: np.ndarray  # (3, 2n^2) int64
    shape: np.ndarray  # (2n^2,) int8
    k: np.ndarray  # (2n^2,) float64, diffusivity per element

    @property
    def h(self) -> float:
        return self.side / self.n

    @property
    def n_elements(self) -> int:
        return 2 * self.n * self.n

    @property
    def element_area(self) -> float:
        return 0.5 * self.h * self.h

    def pixel_origin(self) -> np.ndarray:
        """Lower-left corner of each element's pixel, shape (n_elements, 2)."""
        pix = np.arange(self.n_elements) // 2
        i = pix % self.n
        j = pix // self.n
        return np.column_stack([i * self.h, j * self.h])

    def vertices(self) -> np.ndarray:
        """Physical vertex coordinates, shape (n_elements, 3, 2)."""
        return self.pixel_origin()[:, None, :] + self.h * REF_VERTICES[self.shape]

    def centroids(self) -> np.ndarray:
        return self.vertices().mean(axis=1)

    def edge_normals(self) -> np.ndarray:
        """Outward unit normals, shape (n_elements, 3, 2)."""
        return EDGE_NORMALS[self.shape]

    def edge_lengths(self) -> np.ndarray:
        return self.h * EDGE_LENGTHS[self.shape]

    def boundary_edge_count(self) -> int:
        return int(np.count_nonzero(self.neighbors == OUTER_BOUNDARY))

    def locate(self, points) -> np.ndarray:
        """Element id containing each point (points on a diagonal go to the lower triangle).

        Points outside the closed domain square map to -1.
        """
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        s = points / self.h
        inside = np.all((s >= 0) & (s <= self.n), axis=1)
        i = np.clip(np.floor(s[:, 0]).astype(np.int64), 0, self.n - 1)
        j = np.clip(np.floor(s[:, 1]).astype(np.int64), 0, self.n - 1)
        upper = (s[:, 1] - j) > (s[:, 0] - i)
        e = 2 * (j * self.n + i) + upper
        return np.where(inside, e, -1)

    def with_diffusivity(self, k) -> "StructuredTriMesh":
        k = np.ascontiguousarray(k, dtype=float)
        if k.shape != (self.n_elements,):
            raise ParameterError("diffusivity must have one value per element")
        k.setflags(write=False)
        return replace(self, k=k)


def build_mesh(side: float, n: int, k0: float = 1.0) -> StructuredTriMesh:
    """Pixel triangulation of ``[0, side]^2`` with ``n`` pixels per side.

    All elements start with diffusivity ``k0``; see :func:`assign_diffusivity`.
    """
    if int(n) != n or n < 2:
        raise ParameterError(f"n must be an integer >= 2, got {n}")
    if not side > 0:
        raise ParameterError(f"side must be positive, got {side}")
    n = int(n)
    jj, ii = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ii = ii.ravel()
    jj = jj.ravel()
    pix = jj * n + ii
    lower = 2 * pix
    upper = lower + 1
    ne = 2 * n * n
    nbr = np.full((3, ne), OUTER_BOUNDARY, dtype=np.int64)
    # lower: bottom -> upper of pixel below; right -> upper of pixel to the right
    nbr[0, lower] = np.where(jj > 0, 2 * (pix - n) + 1, OUTER_BOUNDARY)
    nbr[1, lower] = np.where(ii < n - 1, 2 * (pix + 1) + 1, OUTER_BOUNDARY)
    nbr[2, lower] = upper
    # upper: diagonal -> own lower; top -> lower above; left -> lower to the left
    nbr[0, upper] = lower
    nbr[1, upper] = np.where(jj < n - 1, 2 * (pix + n), OUTER_BOUNDARY)
    nbr[2, upper] = np.where(ii > 0, 2 * (pix - 1), OUTER_BOUNDARY)
    shape = np.tile(np.array([0, 1], dtype=np.int8), n * n)
    k = np.full(ne, float(k0))
    for a in (nbr, shape, k):
        a.setflags(write=False)
    return StructuredTriMesh(float(side), n, nbr, shape, k)


def assign_diffusivity(mesh: StructuredTriMesh, substrate) -> StructuredTriMesh:
    """Return a copy of ``mesh`` with k = 0 on elements whose centroid is in an axon."""
    if not math.isclose(mesh.side, substrate.side, rel_tol=1e-12, abs_tol=0.0):
        raise ParameterError(f"mesh side {mesh.side} != substrate side {substrate.side}")
    k = np.full(mesh.n_elements, float(substrate.k0))
    if len(substrate):
        k[axon_elements(mesh, substrate)] = 0.0
    return mesh.with_diffusivity(k)


def axon_elements(mesh: StructuredTriMesh, substrate) -> np.ndarray:
    """Boolean mask of elements whose centroid lies in a closed disk."""
    n, h = mesh.n, mesh.h
    mask = np.zeros(mesh.n_elements, dtype=bool)
    # centroid offsets inside a pixel for (lower, upper)
    off = np.array([[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]]) * h
    for (cx, cy), r in zip(substrate.centers, substrate.radii):
        i0 = max(int(math.floor((cx - r) / h)) - 1, 0)
        i1 = min(int(math.floor((cx + r) / h)) + 1, n - 1)
        j0 = max(int(math.floor((cy - r) / h)) - 1, 0)
        j1 = min(int(math.floor((cy + r) / h)) + 1, n - 1)
        if i0 > i1 or j0 > j1:
            continue
        jj, ii = np.meshgrid(np.arange(j0, j1 + 1), np.arange(i0, i1 + 1), indexing="ij")
        for t in (0, 1):
            dx = ii * h + off[t, 0] - cx
            dy = jj * h + off[t, 1] - cy
            hit = dx * dx + dy * dy <= r * r
            mask[2 * (jj[hit] * n + ii[hit]) + t] = True
    return mask


def format_diffusivity_grid(mesh: StructuredTriMesh) -> str:
    """0/1 dump of the element diffusivity, one pixel row per line.

    Each line holds ``2n`` entries: pixel by pixel, lower then upper triangle.
    """
    flags = (mesh.k > 0).astype(np.int8).reshape(mesh.n, 2 * mesh.n)
    return "\n".join(",".join(map(str, row)) for row in flags) + "\n"
