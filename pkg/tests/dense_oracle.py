"""Dense global assembly of the mixed DG weak form, used as a test oracle.

Shares no code with the production operator: shape functions are Lagrange
polynomials built directly in physical coordinates, integrals use a
Gauss-Legendre tensor rule on the collapsed square, and element adjacency
is recovered by matching edge endpoints geometrically.
"""

import itertools

import numpy as np


def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1), 0.5 * w


class PhysicalLagrange:
    """Lagrange basis of degree p through the equispaced nodes of one triangle."""

    def __init__(self, verts, p):
        self.verts = np.asarray(verts, float)
        self.p = p
        self.center = self.verts.mean(axis=0)
        self.scale = np.ptp(self.verts, axis=0).max()
        self.exps = [(a, b) for a in range(p + 1) for b in range(p + 1 - a)]
        v0, v1, v2 = self.verts
        # nodes in the same order as the package: (i/p, j/p), j outer
        nodes = []
        for j in range(p + 1):
            for i in range(p + 1 - j):
                nodes.append(v0 + (i / p) * (v1 - v0) + (j / p) * (v2 - v0))
        self.nodes = np.array(nodes)
        V = self._mono(self.nodes)
        self.C = np.linalg.inv(V)

    def _mono(self, pts):
        z = (np.atleast_2d(pts) - self.center) / self.scale
        return np.stack([z[:, 0] ** a * z[:, 1] ** b for a, b in self.exps], axis=1)

    def _dmono(self, pts):
        z = (np.atleast_2d(pts) - self.center) / self.scale
        dx = np.stack([a * z[:, 0] ** max(a - 1, 0) * z[:, 1] ** b for a, b in self.exps], axis=1)
        dy = np.stack([b * z[:, 0] ** a * z[:, 1] ** max(b - 1, 0) for a, b in self.exps], axis=1)
        return dx / self.scale, dy / self.scale

    def values(self, pts):
        return self._mono(pts) @ self.C

    def grads(self, pts):
        dx, dy = self._dmono(pts)
        return dx @ self.C, dy @ self.C

    def area_rule(self, n=8):
        s, w = _gauss01(n)
        v0, v1, v2 = self.verts
        pts, wts = [], []
        a, b = v1 - v0, v2 - v0
        area2 = abs(a[0] * b[1] - a[1] * b[0])
        for (sa, wa), (sb, wb) in itertools.product(zip(s, w), zip(s, w)):
            pts.append(v0 + sa * (v1 - v0) + sb * (1 - sa) * (v2 - v0))
            wts.append(wa * wb * (1 - sa) * area2)
        return np.array(pts), np.array(wts)


def assemble(mesh, p, n_quad=8):
    """Return (M, Gx, Gy, F) with q_dim = M^-1 G_dim u and du/dt = M^-1 F [qx; qy]."""
    verts = mesh.vertices()
    ne = len(verts)
    d = (p + 1) * (p + 2) // 2
    N = ne * d
    bases = [PhysicalLagrange(v, p) for v in verts]
    M = np.zeros((N, N))
    Gx = np.zeros((N, N))
    Gy = np.zeros((N, N))
    F = np.zeros((N, 2 * N))
    k = np.asarray(mesh.k, float)

    for e, B in enumerate(bases):
        sl = slice(e * d, (e + 1) * d)
        pts, w = B.area_rule(n_quad)
        phi = B.values(pts)
        gx, gy = B.grads(pts)
        M[sl, sl] = np.einsum("q,qi,qj->ij", w, phi, phi)
        # -int u dv/dx
        Gx[sl, sl] -= np.einsum("q,qi,qj->ij", w, gx, phi)
        Gy[sl, sl] -= np.einsum("q,qi,qj->ij", w, gy, phi)
        # -k int q . grad v
        F[sl, sl] -= k[e] * np.einsum("q,qi,qj->ij", w, gx, phi)
        F[sl, N + e * d:N + (e + 1) * d] -= k[e] * np.einsum("q,qi,qj->ij", w, gy, phi)

    # edge adjacency by endpoint matching
    edge_map = {}
    for e in range(ne):
        for f in range(3):
            a = tuple(np.round(verts[e, f], 9))
            b = tuple(np.round(verts[e, (f + 1) % 3], 9))
            edge_map.setdefault(frozenset((a, b)), []).append((e, f))

    s, ws = _gauss01(p + 3)
    L = mesh.side
    for key, owners in edge_map.items():
        for e, f in owners:
            a = verts[e, f]
            b = verts[e, (f + 1) % 3]
            t = b - a
            length = np.hypot(*t)
            nrm = np.array([t[1], -t[0]]) / length  # outward for CCW triangles
            pts = a + s[:, None] * t
            w = ws * length
            Be = bases[e]
            phi = Be.values(pts)
            sl = slice(e * d, (e + 1) * d)
            others = [o for o in owners if o[0] != e]
            if others:
                e2 = others[0][0]
                phi2 = bases[e2].values(pts)
                sl2 = slice(e2 * d, (e2 + 1) * d)
                # u-hat = (u- + u+)/2
                for dim, G in ((0, Gx), (1, Gy)):
                    G[sl, sl] += 0.5 * nrm[dim] * np.einsum("q,qi,qj->ij", w, phi, phi)
                    G[sl, sl2] += 0.5 * nrm[dim] * np.einsum("q,qi,qj->ij", w, phi, phi2)
                km, kp = k[e], k[e2]
                kh = 0.0 if km + kp == 0 else 2 * km * kp / (km + kp)
                for dim in (0, 1):
                    off = dim * N
                    F[sl, off + e * d:off + (e + 1) * d] += kh * 0.5 * nrm[dim] * np.einsum("q,qi,qj->ij", w, phi, phi)
                    F[sl, off + e2 * d:off + (e2 + 1) * d] += kh * 0.5 * nrm[dim] * np.einsum("q,qi,qj->ij", w, phi, phi2)
            else:
                # outer square: u-hat = 0, flux k- q- . n
                mid = 0.5 * (a + b)
                assert np.isclose(mid, 0).any() or np.isclose(mid, L).any()
                for dim in (0, 1):
                    off = dim * N
                    F[sl, off + e * d:off + (e + 1) * d] += k[e] * nrm[dim] * np.einsum("q,qi,qj->ij", w, phi, phi)
    return M, Gx, Gy, F


class DenseDG:
    """Global-matrix evaluation of q, rhs and RK4 steps on a small mesh."""

    def __init__(self, mesh, p):
        self.mesh = mesh
        self.p = p
        self.d = (p + 1) * (p + 2) // 2
        self.ne = mesh.n_elements
        M, Gx, Gy, F = assemble(mesh, p)
        Minv = np.linalg.inv(M)
        self.Dx = Minv @ Gx
        self.Dy = Minv @ Gy
        self.R = Minv @ F
        self.L = self.R @ np.vstack([self.Dx, self.Dy])

    def _flat(self, u):
        return np.asarray(u).T.reshape(-1)  # element-major

    def _unflat(self, v):
        return v.reshape(self.ne, self.d).T

    def q(self, u):
        v = self._flat(u)
        return self._unflat(self.Dx @ v), self._unflat(self.Dy @ v)

    def rhs(self, qx, qy):
        return self._unflat(self.R @ np.concatenate([self._flat(qx), self._flat(qy)]))

    def apply(self, u):
        return self._unflat(self.L @ self._flat(u))

    def rk4(self, u, dt):
        v = self._flat(u)
        L = self.L
        k1 = L @ v
        k2 = L @ (v + 0.5 * dt * k1)
        k3 = L @ (v + 0.5 * dt * k2)
        k4 = L @ (v + dt * k3)
        return self._unflat(v + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
