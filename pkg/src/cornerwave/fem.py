"""Piecewise-linear finite elements on :class:`~cornerwave.geometry.TriMesh`."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .geometry import TriMesh


def _tri_weights(mesh: TriMesh, weight) -> np.ndarray:
    if weight is None:
        return np.ones(mesh.n_triangles)
    w = np.asarray(weight)
    if w.ndim == 0:
        return np.full(mesh.n_triangles, w[()])
    if w.shape != (mesh.n_triangles,):
        raise ValueError("triangle weight must be scalar or one value per triangle")
    return w


def shape_gradients(mesh: TriMesh) -> np.ndarray:
    """Constant gradients of the three hat functions on each triangle, shape (T, 3, 2)."""
    p, t = mesh.nodes, mesh.triangles
    x, y = p[t, 0], p[t, 1]
    area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / area2[:, None]
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / area2[:, None]
    return np.stack([gx, gy], axis=2)


def _assemble(mesh: TriMesh, local: np.ndarray) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def stiffness(mesh: TriMesh, weight=None) -> sp.csr_matrix:
    """``K_ij = ∫ a ∇φ_i·∇φ_j`` with ``a`` constant per triangle."""
    g = shape_gradients(mesh)
    a = mesh.areas() * _tri_weights(mesh, weight)
    local = np.einsum("tid,tjd->tij", g, g) * a[:, None, None]
    return _assemble(mesh, local)


_P1_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


def mass(mesh: TriMesh, weight=None) -> sp.csr_matrix:
    """Consistent mass ``M_ij = ∫ c φ_i φ_j`` with ``c`` constant per triangle."""
    a = mesh.areas() * _tri_weights(mesh, weight)
    return _assemble(mesh, a[:, None, None] * _P1_MASS[None])


def edge_mass(mesh: TriMesh, edges: np.ndarray, weight=None) -> sp.csr_matrix:
    """``∫_Γ c φ_i φ_j`` over a set of edges with ``c`` constant per edge."""
    edges = np.asarray(edges, np.int64).reshape(-1, 2)
    n = mesh.n_nodes
    if len(edges) == 0:
        return sp.csr_matrix((n, n))
    length = np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1)
    w = np.ones(len(edges)) if weight is None else np.broadcast_to(np.asarray(weight), (len(edges),))
    lw = length * w
    local = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    vals = lw[:, None, None] * local[None]
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    return sp.coo_matrix((vals.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def edge_load(mesh: TriMesh, edges: np.ndarray, g, n_gauss: int = 3) -> np.ndarray:
    """``∫_Γ g φ_i`` with ``g(points, edge_index)`` evaluated by Gauss quadrature."""
    edges = np.asarray(edges, np.int64).reshape(-1, 2)
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    tg, wg = 0.5 * (xg + 1), 0.5 * wg
    a, b = mesh.nodes[edges[:, 0]], mesh.nodes[edges[:, 1]]
    length = np.linalg.norm(b - a, axis=1)
    pts = a[:, None, :] + tg[None, :, None] * (b - a)[:, None, :]
    vals = np.asarray(g(pts.reshape(-1, 2), np.repeat(np.arange(len(edges)), n_gauss)))
    vals = vals.reshape(len(edges), n_gauss)
    out = np.zeros(mesh.n_nodes, dtype=np.result_type(vals, float))
    np.add.at(out, edges[:, 0], (vals * wg * (1 - tg)).sum(axis=1) * length)
    np.add.at(out, edges[:, 1], (vals * wg * tg).sum(axis=1) * length)
    return out


def gradients(mesh: TriMesh, field: np.ndarray) -> np.ndarray:
    """Per-triangle gradient of a nodal P1 field, shape (T, 2)."""
    g = shape_gradients(mesh)
    return np.einsum("tid,ti->td", g, np.asarray(field)[mesh.triangles])


def l2_norm(mesh: TriMesh, field: np.ndarray) -> float:
    f = np.asarray(field)
    return float(np.sqrt(abs(np.vdot(f, mass(mesh) @ f))))


def h1_seminorm(mesh: TriMesh, field: np.ndarray) -> float:
    f = np.asarray(field)
    return float(np.sqrt(abs(np.vdot(f, stiffness(mesh) @ f))))


class PointLocator:
    """Find containing triangles and barycentric coordinates."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self._centroids = mesh.nodes[mesh.triangles].mean(axis=1)
        self._tree = cKDTree(self._centroids)
        self._k = min(16, mesh.n_triangles)

    def locate(self, points: np.ndarray, tol: float = 1e-10):
        """Return (triangle index, barycentric coordinates); index -1 when outside."""
        pts = np.atleast_2d(np.asarray(points, float))
        p, t = self.mesh.nodes, self.mesh.triangles
        idx = np.full(len(pts), -1, np.int64)
        bary = np.zeros((len(pts), 3))
        _, cand = self._tree.query(pts, k=self._k)
        cand = np.atleast_2d(cand)
        todo = np.arange(len(pts))
        for col in range(cand.shape[1]):
            if len(todo) == 0:
                break
            tri = cand[todo, col]
            lam = _barycentric(p[t[tri]], pts[todo])
            ok = np.all(lam >= -tol, axis=1)
            idx[todo[ok]] = tri[ok]
            bary[todo[ok]] = lam[ok]
            todo = todo[~ok]
        for i in todo:  # brute force for stragglers
            lam = _barycentric(p[t], np.repeat(pts[i][None], len(t), axis=0))
            best = int(np.argmax(lam.min(axis=1)))
            if lam[best].min() >= -tol:
                idx[i], bary[i] = best, lam[best]
        return idx, bary

    def interpolate(self, field: np.ndarray, points: np.ndarray) -> np.ndarray:
        idx, bary = self.locate(points)
        if np.any(idx < 0):
            raise ValueError("interpolation point outside the mesh")
        f = np.asarray(field)[self.mesh.triangles[idx]]
        return np.sum(f * bary, axis=1)


def _barycentric(tri: np.ndarray, pts: np.ndarray) -> np.ndarray:
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    v0, v1, v2 = b - a, c - a, pts - a
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / det
    l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / det
    return np.column_stack([1 - l1 - l2, l1, l2])
