"""Conductive transmission eigenvalue problem.

Find ``k`` and ``(v, w) != 0`` with

    Δw + k² q w = 0,  Δv + k² v = 0  in Ω,
    w = v,  ∂_ν v + η v = ∂_ν w       on ∂Ω.

P1 elements with a shared boundary trace ``t = v = w`` give the pencil
``A x = k² B x`` for ``x = [w_I; v_I; t]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import jv, jvp

from . import fem
from .geometry import (BallAverage, CornerProbe, Disk, Polygon, Sector, TriMesh,
                       ball_average, delta_W, shrinking_ball_average)
from .quadrature import gauss_legendre, gk_quad, graded_breakpoints, polar_quad

DENSE_BUDGET = 4000
RESIDUAL_TOL = 1e-6


# -- media -----------------------------------------------------------------

@dataclass(frozen=True)
class QPiece:
    """Region of constant contrast inside the domain."""

    polygon: Polygon
    value: complex


@dataclass(frozen=True, eq=False)
class ConductiveMedium:
    """Domain, piecewise-constant contrast ``q`` and edgewise-constant ``η``.

    ``q`` is the background value; ``q_pieces`` override it on sub-polygons
    (later pieces win).  ``eta`` is a scalar or a mapping from boundary edge
    tag to value.
    """

    domain: Polygon | Disk
    q: complex = 1.0
    eta: complex | dict = 0.0
    q_pieces: tuple = ()

    def __post_init__(self):
        if not isinstance(self.domain, (Polygon, Disk)):
            raise TypeError("domain must be a Polygon or Disk")
        values = [self.q] + [p.value for p in self.q_pieces]
        if any(v == 0 for v in values):
            raise ValueError("q must be non-zero on the domain")
        if isinstance(self.eta, dict):
            object.__setattr__(self, "eta", {int(k): complex(v) for k, v in self.eta.items()})

    @property
    def edge_tags(self) -> list[int]:
        return list(range(len(self.domain))) if isinstance(self.domain, Polygon) else [0]

    def eta_at(self, tag: int) -> complex:
        if isinstance(self.eta, dict):
            return self.eta[tag]
        return complex(self.eta)

    def eta_per_edge(self, tags: np.ndarray) -> np.ndarray:
        if isinstance(self.eta, dict):
            known = set(self.eta)
            missing = set(np.unique(tags).tolist()) - known
            if missing:
                raise ValueError(f"no eta given for boundary tags {sorted(missing)}")
            return np.array([self.eta[int(t)] for t in tags], dtype=complex)
        return np.full(len(tags), complex(self.eta))

    def q_at(self, points: np.ndarray) -> np.ndarray:
        out = np.full(len(points), complex(self.q))
        for piece in self.q_pieces:
            out[piece.polygon.contains(points)] = piece.value
        return out

    def q_per_triangle(self, mesh: TriMesh) -> np.ndarray:
        return self.q_at(mesh.nodes[mesh.triangles].mean(axis=1))

    def is_real(self) -> bool:
        vals = [self.q] + [p.value for p in self.q_pieces]
        etas = list(self.eta.values()) if isinstance(self.eta, dict) else [self.eta]
        return all(np.imag(v) == 0 for v in vals + etas)

    def with_eta(self, eta) -> "ConductiveMedium":
        return ConductiveMedium(self.domain, self.q, eta, self.q_pieces)

    # JSON --------------------------------------------------------------
    def to_dict(self) -> dict:
        if isinstance(self.domain, Polygon):
            dom = {"type": "polygon", "vertices": [list(v) for v in self.domain.vertices]}
        else:
            dom = {"type": "disk", "radius": self.domain.radius, "center": list(self.domain.center)}
        q = [_cx(self.q)] + [{"polygon": [list(v) for v in p.polygon.vertices], "value": _cx(p.value)}
                             for p in self.q_pieces]
        tags = self.edge_tags
        eta = {"edges": [[t, float(np.real(self.eta_at(t))), float(np.imag(self.eta_at(t)))] for t in tags]}
        return {"domain": dom, "q": q, "eta": eta}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ConductiveMedium":
        dom = d["domain"]
        if dom["type"] == "polygon":
            domain = Polygon(dom["vertices"])
        elif dom["type"] == "disk":
            domain = Disk(float(dom.get("radius", 1.0)), tuple(dom.get("center", (0.0, 0.0))))
        else:
            raise ValueError(f"unknown domain type {dom['type']!r}")
        qspec = d.get("q", [1.0])
        if not isinstance(qspec, list):
            qspec = [qspec]
        q0 = _from_cx(qspec[0])
        pieces = tuple(QPiece(Polygon(p["polygon"]), _from_cx(p["value"])) for p in qspec[1:])
        eta_spec = d.get("eta", 0.0)
        if isinstance(eta_spec, dict):
            eta = {int(t): complex(re, im) for t, re, im in eta_spec["edges"]}
        else:
            eta = _from_cx(eta_spec)
        return cls(domain, q0, eta, pieces)

    @classmethod
    def from_json(cls, text: str) -> "ConductiveMedium":
        return cls.from_dict(json.loads(text))


def _cx(z):
    z = complex(z)
    return z.real if z.imag == 0 else [z.real, z.imag]


def _from_cx(v):
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1])
    return complex(v) if isinstance(v, complex) else float(v)


# -- assembly --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Pencil:
    """Sparse pair ``(A, B)`` with the DOF layout ``[w_I; v_I; t_B]``.

    Iterating yields ``A, B`` so ``A, B = assemble(...)`` works.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    mesh: TriMesh
    medium: ConductiveMedium
    interior: np.ndarray
    boundary: np.ndarray

    def __iter__(self):
        return iter((self.A, self.B))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nodal ``(v, w)`` from a DOF vector."""
        ni, nb = len(self.interior), len(self.boundary)
        w = np.zeros(self.mesh.n_nodes, dtype=x.dtype)
        v = np.zeros(self.mesh.n_nodes, dtype=x.dtype)
        w[self.interior], v[self.interior] = x[:ni], x[ni:2 * ni]
        w[self.boundary] = v[self.boundary] = x[2 * ni:2 * ni + nb]
        return v, w

    def join(self, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        return np.concatenate([w[self.interior], v[self.interior], v[self.boundary]])


def _check_tags(medium: ConductiveMedium, mesh: TriMesh):
    valid = set(medium.edge_tags)
    used = set(np.unique(mesh.edge_tags).tolist())
    dangling = used - valid
    if dangling:
        raise ValueError(f"mesh boundary tags {sorted(dangling)} do not belong to the domain")
    if isinstance(medium.eta, dict):
        extra = set(medium.eta) - valid
        if extra:
            raise ValueError(f"eta given for unknown boundary tags {sorted(extra)}")
        missing = valid - set(medium.eta)
        if missing:
            raise ValueError(f"no eta given for boundary tags {sorted(missing)}")


def assemble(medium: ConductiveMedium, mesh: TriMesh) -> Pencil:
    """Assemble the conductive transmission pencil on ``mesh``.

    Rows: interior Helmholtz for ``w`` (weight ``q``), interior Helmholtz for
    ``v``, and boundary-tested difference ``w - v`` carrying ``-∫ η t φ``.
    """
    _check_tags(medium, mesh)
    qt = medium.q_per_triangle(mesh)
    K = fem.stiffness(mesh)
    M = fem.mass(mesh)
    Mq = fem.mass(mesh, qt)
    eta = medium.eta_per_edge(mesh.edge_tags)
    E = fem.edge_mass(mesh, mesh.boundary_edges, eta)
    real = medium.is_real()
    if real:
        Mq, E = Mq.real, E.real
    I = mesh.interior_nodes()
    Bn = mesh.boundary_nodes()

    def blk(Mat, r, c):
        return Mat[r][:, c]

    Z_II = sp.csr_matrix((len(I), len(I)))
    A = sp.bmat([
        [blk(K, I, I), Z_II, blk(K, I, Bn)],
        [Z_II, blk(K, I, I), blk(K, I, Bn)],
        [blk(K, Bn, I), -blk(K, Bn, I), -blk(E, Bn, Bn)],
    ], format="csr")
    Bm = sp.bmat([
        [blk(Mq, I, I), Z_II, blk(Mq, I, Bn)],
        [Z_II, blk(M, I, I), blk(M, I, Bn)],
        [blk(Mq, Bn, I), -blk(M, Bn, I), blk(Mq, Bn, Bn) - blk(M, Bn, Bn)],
    ], format="csr")
    return Pencil(A, Bm, mesh, medium, I, Bn)


# -- eigenpairs ------------------------------------------------------------

@dataclass(frozen=True)
class SearchWindow:
    """Eigenvalues ``k`` with ``k_min < Re k <= k_max`` and ``|Im k| <= imag_max``."""

    k_min: float = 0.0
    k_max: float = math.inf
    imag_max: float = 1e-8

    def contains(self, k: complex) -> bool:
        return self.k_min < k.real <= self.k_max and abs(k.imag) <= self.imag_max * max(1.0, abs(k))

    @classmethod
    def for_mesh(cls, mesh: TriMesh, imag_max: float = 1e-8) -> "SearchWindow":
        """Real window up to the resolution limit ``k h_mesh < 0.5``."""
        return cls(0.0, 0.5 / mesh.max_edge_length(), imag_max)


@dataclass(frozen=True, eq=False)
class EigenPair:
    """Eigenvalue ``k`` with nodal fields ``v, w`` and four relative residuals.

    ``residuals`` are ``(pde_v, pde_w, bc_dirichlet, bc_conductive)``.
    """

    k: complex
    v: np.ndarray
    w: np.ndarray
    residuals: tuple = (0.0, 0.0, 0.0, 0.0)
    mesh: TriMesh | None = None
    medium: ConductiveMedium | None = None

    @property
    def max_residual(self) -> float:
        return max(self.residuals)

    def summary(self) -> dict:
        keys = ("pde_v", "pde_w", "bc_dirichlet", "bc_conductive")
        return {"k_re": float(np.real(self.k)), "k_im": float(np.imag(self.k)),
                "residuals": dict(zip(keys, (float(r) for r in self.residuals)))}


def _k_from_lambda(lam: complex) -> complex:
    k = np.sqrt(complex(lam))
    return k if k.real >= 0 else -k


def _normalize(pencil: Pencil, x: np.ndarray) -> np.ndarray:
    """Scale so ``‖v‖_M + ‖w‖_M = 1`` with the largest entry real positive."""
    v, w = pencil.split(x)
    nrm = fem.l2_norm(pencil.mesh, v) + fem.l2_norm(pencil.mesh, w)
    x = x / nrm
    j = int(np.argmax(np.abs(x)))
    return x * (abs(x[j]) / x[j]) if x[j] != 0 else x


def pair_residuals(pencil: Pencil, k: complex, x: np.ndarray) -> tuple:
    """Relative residuals of the three row blocks and of ``v = w`` on the boundary."""
    lam = k * k
    r = pencil.A @ x - lam * (pencil.B @ x)
    scale = np.abs(pencil.A) @ np.abs(x) + abs(lam) * (np.abs(pencil.B) @ np.abs(x))
    ni = len(pencil.interior)
    blocks = (slice(ni, 2 * ni), slice(0, ni), slice(2 * ni, None))
    res = []
    for b in blocks:
        den = np.linalg.norm(scale[b])
        res.append(float(np.linalg.norm(r[b]) / den) if den > 0 else 0.0)
    v, w = pencil.split(x)
    bd = float(np.max(np.abs(v[pencil.boundary] - w[pencil.boundary]))) if len(pencil.boundary) else 0.0
    return (res[0], res[1], bd, res[2])


def polish(pencil: Pencil, lam: complex, x0: np.ndarray | None = None, iters: int = 3):
    """Inverse iteration on ``(A - σB)`` near ``lam``; returns refined ``(lam, x)``."""
    real = np.isrealobj(pencil.A.data) and abs(np.imag(lam)) <= 1e-14 * abs(lam)
    sigma = (lam.real if real else lam) * (1 + 1e-9)
    dtype = float if real else complex
    Ms = (pencil.A - sigma * pencil.B).astype(dtype).tocsc()
    lu = spla.splu(Ms)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(pencil.n).astype(dtype) if x0 is None else np.asarray(x0, dtype)
    for _ in range(iters):
        y = lu.solve(pencil.B @ x)
        x = y / np.linalg.norm(y)
    Ax, Bx = pencil.A @ x, pencil.B @ x
    lam_new = np.vdot(Bx, Ax) / np.vdot(Bx, Bx)
    if real:
        lam_new = lam_new.real
    return lam_new, x


def solve_dense_qz(pencil: Pencil, window: SearchWindow | None = None, *,
                   budget: int = DENSE_BUDGET, tol: float = RESIDUAL_TOL) -> list[EigenPair]:
    """All eigenpairs in ``window`` from a dense generalized Schur (QZ) decomposition.

    Eigenvalues come from LAPACK's QZ on the dense pencil; each one in the
    window is polished by sparse inverse iteration and kept only if every
    block residual is below ``tol``.  Pairs are sorted by ``Re k``.
    """
    if pencil.n > budget:
        raise ValueError(f"pencil dimension {pencil.n} exceeds the dense budget {budget}; coarsen the mesh")
    window = window or SearchWindow.for_mesh(pencil.mesh)
    A, B = pencil.A.toarray(), pencil.B.toarray()
    alpha, beta = sla.eigvals(A, B, homogeneous_eigvals=True)
    finite = np.abs(beta) > 1e-12 * np.abs(alpha)
    lams = alpha[finite] / beta[finite]
    pairs = []
    for lam in lams:
        k = _k_from_lambda(lam)
        if not window.contains(k):
            continue
        lam_p, x = polish(pencil, complex(lam))
        k = _k_from_lambda(lam_p)
        res = pair_residuals(pencil, k, x)
        if max(res) >= tol or not window.contains(k):
            continue
        if any(abs(k - p.k) <= 1e-9 * abs(k) for p in pairs):
            continue
        x = _normalize(pencil, x)
        v, w = pencil.split(x)
        pairs.append(EigenPair(k, v, w, res, pencil.mesh, pencil.medium))
    pairs.sort(key=lambda p: (p.k.real, p.k.imag))
    return pairs


def eigenpair_near(pencil: Pencil, k_guess: complex, tol: float = RESIDUAL_TOL) -> EigenPair:
    """Polished eigenpair closest to ``k_guess`` by sparse shift-and-invert inverse iteration."""
    lam, x = polish(pencil, complex(k_guess) ** 2, iters=6)
    for _ in range(3):
        lam, x = polish(pencil, complex(lam), x, iters=2)
    k = _k_from_lambda(lam)
    res = pair_residuals(pencil, k, x)
    if max(res) >= tol:
        raise RuntimeError(f"inverse iteration near k={k_guess} did not converge (residual {max(res):.2e})")
    x = _normalize(pencil, x)
    v, w = pencil.split(x)
    return EigenPair(k, v, w, res, pencil.mesh, pencil.medium)


def normalize_pair(pair: EigenPair, scale: complex = 1.0) -> EigenPair:
    """Re-normalize ``scale * (v, w)``; idempotent up to the phase convention."""
    if pair.mesh is None:
        raise ValueError("pair has no mesh")
    v, w = scale * pair.v, scale * pair.w
    nrm = fem.l2_norm(pair.mesh, v) + fem.l2_norm(pair.mesh, w)
    v, w = v / nrm, w / nrm
    stacked = np.concatenate([w, v])
    j = int(np.argmax(np.abs(stacked)))
    ph = abs(stacked[j]) / stacked[j]
    return EigenPair(pair.k, v * ph, w * ph, pair.residuals, pair.mesh, pair.medium)


# -- disk oracle -----------------------------------------------------------

@dataclass(frozen=True)
class DiskModeProblem:
    R: float
    q: float
    eta: complex
    n: int

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("R must be positive")
        if not np.real(self.q) > 0:
            raise ValueError("q must be positive")


def disk_determinant(problem: DiskModeProblem, k: complex) -> complex:
    """``d_n(k) = J_n(k1 R)(k J_n'(kR) + η J_n(kR)) - k1 J_n'(k1 R) J_n(kR)``, ``k1 = k sqrt(q)``."""
    if k == 0:
        raise ValueError("k must be non-zero")
    n, R, eta = problem.n, problem.R, problem.eta
    k1 = k * np.sqrt(problem.q)
    val = jv(n, k1 * R) * (k * jvp(n, k * R) + eta * jv(n, k * R)) - k1 * jvp(n, k1 * R) * jv(n, k * R)
    return complex(val) if np.iscomplexobj(val) or isinstance(k, complex) else val


def disk_eigenvalues(problem: DiskModeProblem, k_interval: tuple, *, samples: int = 2000,
                     xtol: float = 1e-14, accept: float = 1e-10) -> list[float]:
    """Real roots of ``Re d_n`` bracketed by sign changes, kept if ``|d_n| < accept``."""
    from scipy.optimize import brentq

    a, b = k_interval
    if not (0 < a < b):
        raise ValueError("interval must be positive and increasing")
    ks = np.linspace(a, b, samples)
    f = lambda k: float(np.real(disk_determinant(problem, k)))
    vals = np.array([f(k) for k in ks])
    roots = []
    for i in range(len(ks) - 1):
        if vals[i] == 0:
            roots.append(float(ks[i]))
        elif vals[i] * vals[i + 1] < 0:
            r = brentq(f, ks[i], ks[i + 1], xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
            if abs(disk_determinant(problem, r)) < accept:
                roots.append(float(r))
    return roots


def disk_spectrum(R: float, q: float, eta: complex, k_interval: tuple, n_max: int = 20) -> list[tuple]:
    """Sorted ``(k, n)`` for all modes ``|n| <= n_max`` (each ``n > 0`` is double)."""
    out = []
    for n in range(n_max + 1):
        for k in disk_eigenvalues(DiskModeProblem(R, q, eta, n), k_interval):
            out.append((k, n))
    return sorted(out)


# -- corner experiments ----------------------------------------------------

@dataclass(frozen=True)
class CornerProfile:
    corner: list
    control: list | None
    corner_value: float

    def ratio(self, which: str = "corner", resolved_only: bool = False) -> float:
        prof = self.corner if which == "corner" else self.control
        if prof is None:
            raise ValueError("no control profile")
        if resolved_only:
            prof = [b for b in prof if b.resolved]
        return float(prof[-1].value / prof[0].value)

    def to_rows(self) -> list:
        rows = [("corner", b.rho, float(b.value), b.resolved) for b in self.corner]
        if self.control:
            rows += [("control", b.rho, float(b.value), b.resolved) for b in self.control]
        return rows


def _corner_index(polygon: Polygon, vertex) -> int | None:
    d = np.linalg.norm(polygon.points - np.asarray(vertex), axis=1)
    i = int(np.argmin(d))
    return i if d[i] < 1e-12 else None


def flat_point(pair: EigenPair, min_corner_distance: float = 0.25):
    """Boundary node with the largest ``|v|`` at least ``min_corner_distance`` from every corner."""
    mesh = pair.mesh
    bn = mesh.boundary_nodes()
    pts = mesh.nodes[bn]
    if isinstance(pair.medium.domain, Polygon):
        corners = pair.medium.domain.points
        far = np.min(np.linalg.norm(pts[:, None] - corners[None], axis=2), axis=1) >= min_corner_distance
        bn, pts = bn[far], pts[far]
    j = int(np.argmax(np.abs(pair.v[bn])))
    return tuple(pts[j])


def corner_vanishing_profile(pair: EigenPair, probe: CornerProbe, control: CornerProbe | None = None,
                             *, field: str = "v") -> CornerProfile:
    """Shrinking-ball averages of ``|v|`` at a corner, with an optional control probe.

    Requires the probe to sit on a polygon corner whose opening is not π;
    the corner ``η`` must be non-zero for the vanishing regime.
    """
    if pair.mesh is None:
        raise ValueError("pair has no mesh")
    f = pair.v if field == "v" else pair.w
    if pair.medium is not None and isinstance(pair.medium.domain, Polygon):
        poly = pair.medium.domain
        i = _corner_index(poly, probe.vertex)
        if i is None:
            raise ValueError("probe vertex is not a corner of the domain")
        if abs(poly.interior_angle(i) - math.pi) < 1e-9:
            raise ValueError("corner opening equals pi; no vanishing is asserted there")
    prof = shrinking_ball_average(f, pair.mesh, probe)
    ctrl = shrinking_ball_average(f, pair.mesh, control) if control is not None else None
    node = int(np.argmin(np.linalg.norm(pair.mesh.nodes - np.asarray(probe.vertex), axis=1)))
    scale = float(np.max(np.abs(f))) or 1.0
    return CornerProfile(prof, ctrl, float(abs(f[node]) / scale))


def interior_indicator(pair: EigenPair, probe: CornerProbe, V, *, field: str = "w") -> list[BallAverage]:
    """Complex averages of ``V·w`` over ``B(vertex, ρ) ∩ Ω``.

    ``V`` is a scalar or a nodal array.  Requires ``η = 0`` on the two edges
    meeting at the corner.
    """
    if pair.medium is not None and isinstance(pair.medium.domain, Polygon):
        poly = pair.medium.domain
        i = _corner_index(poly, probe.vertex)
        if i is None:
            raise ValueError("probe vertex is not a corner of the domain")
        for tag in (i, (i - 1) % len(poly)):
            if pair.medium.eta_at(tag) != 0:
                raise ValueError("interior indicator needs eta = 0 on the edges at the corner")
        if abs(poly.interior_angle(i) - math.pi) < 1e-9:
            raise ValueError("corner opening equals pi")
    f = pair.w if field == "w" else pair.v
    Vn = np.broadcast_to(np.asarray(V), f.shape)
    g = Vn * f
    out = []
    for rho in probe.radii:
        val = ball_average(pair.mesh, g, probe.vertex, rho, absolute=False)
        out.append(BallAverage(rho, complex(val), True))
    return out


# -- Green identities ------------------------------------------------------

@dataclass(frozen=True)
class AnalyticField:
    """Field with callable value, gradient ``(n, 2)`` and Laplacian on point arrays ``(n, 2)``."""

    value: Callable
    grad: Callable
    laplacian: Callable


@dataclass(frozen=True)
class GreenResult:
    lhs: complex
    rhs: complex
    residual: float


def _polygon_area_integral(f, polygon: Polygon, order: int = 24) -> complex:
    """Integrate over a polygon with a Duffy-collapsed Gauss rule on a triangle fan."""
    import triangle

    pts = polygon.points
    n = len(pts)
    seg = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
    tri = triangle.triangulate({"vertices": pts, "segments": seg}, "p")
    x, w = gauss_legendre(order)
    U, Vv = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    # Duffy: (u, v) in [0,1]^2 -> (u, u v) on the reference triangle {0<y<x<1}
    total = 0j
    for t in tri["triangles"]:
        a, b, c = tri["vertices"][t]
        px = a + np.outer(U.ravel(), b - a) + np.outer((U * Vv).ravel(), c - b)
        jac = abs((b - a)[0] * (c - b)[1] - (b - a)[1] * (c - b)[0])
        total += np.sum(f(px) * (W * U).ravel()) * jac
    return complex(total)


def _segment_integral(f, a, b, grade: str | None = None) -> complex:
    a, b = np.asarray(a, float), np.asarray(b, float)
    L = float(np.linalg.norm(b - a))

    def g(t):
        return f(a + np.outer(t, b - a) / L)

    return complex(gk_quad(g, 0.0, L, epsabs=1e-300, epsrel=1e-13, grade=grade))


def green_identity(f: AnalyticField, g: AnalyticField, domain: Polygon | Sector) -> GreenResult:
    """Both sides of ``∫(gΔf - fΔg) = ∮(g ∂_ν f - f ∂_ν g)`` by adaptive quadrature.

    ``domain`` is a polygon or a truncated sector with vertex at the origin.
    The residual is ``|lhs - rhs| / (|lhs| + |rhs| + ε)`` with ``ε`` the
    integral of the absolute integrands, so that two vanishing sides give 0.
    """
    vol = lambda x: g.value(x) * f.laplacian(x) - f.value(x) * g.laplacian(x)
    vol_abs = lambda x: np.abs(g.value(x) * f.laplacian(x)) + np.abs(f.value(x) * g.laplacian(x))

    def flux(normal):
        nrm = np.asarray(normal, float)

        def h(x):
            return g.value(x) * (f.grad(x) @ nrm) - f.value(x) * (g.grad(x) @ nrm)

        def h_abs(x):
            return np.abs(g.value(x) * (f.grad(x) @ nrm)) + np.abs(f.value(x) * (g.grad(x) @ nrm))

        return h, h_abs

    if isinstance(domain, Polygon):
        lhs = _polygon_area_integral(vol, domain)
        scale = _polygon_area_integral(vol_abs, domain).real
        p = domain.points
        rhs, bscale = 0j, 0.0
        for a, b in zip(p, np.roll(p, -1, axis=0)):
            t = (b - a) / np.linalg.norm(b - a)
            h, h_abs = flux((t[1], -t[0]))
            rhs += _segment_integral(h, a, b)
            bscale += _segment_integral(h_abs, a, b).real
    elif isinstance(domain, Sector):
        hR = domain.h
        lhs = polar_quad(lambda x1, x2: vol(np.column_stack([x1, x2])), domain.theta_m, domain.theta_M, hR)
        scale = polar_quad(lambda x1, x2: vol_abs(np.column_stack([x1, x2])),
                           domain.theta_m, domain.theta_M, hR).real
        rhs, bscale = 0j, 0.0
        for th, sgn in ((domain.theta_m, -1), (domain.theta_M, 1)):
            e = np.array([math.cos(th), math.sin(th)])
            nrm = sgn * np.array([-e[1], e[0]])
            h, h_abs = flux(nrm)
            rhs += _segment_integral(h, (0.0, 0.0), hR * e, grade="a")
            bscale += _segment_integral(h_abs, (0.0, 0.0), hR * e, grade="a").real

        def arc(ths, absolute=False):
            pts = hR * np.column_stack([np.cos(ths), np.sin(ths)])
            out = np.empty(len(ths), complex)
            for i, (pt, th) in enumerate(zip(pts, ths)):
                hh, hh_abs = flux((math.cos(th), math.sin(th)))
                out[i] = (hh_abs if absolute else hh)(pt[None])[0]
            return out * hR

        rhs += complex(gk_quad(arc, domain.theta_m, domain.theta_M, epsabs=1e-300, epsrel=1e-13))
        bscale += float(np.real(gk_quad(lambda t: arc(t, True), domain.theta_m, domain.theta_M,
                                        epsabs=1e-300, epsrel=1e-13)))
    else:
        raise TypeError("domain must be a Polygon or Sector")
    eps = scale + bscale
    den = abs(lhs) + abs(rhs) + eps
    return GreenResult(complex(lhs), complex(rhs), float(abs(lhs - rhs) / den) if den > 0 else 0.0)


# -- master integral identity ---------------------------------------------

@dataclass(frozen=True)
class CornerFields:
    """Data on a corner sector in local coordinates (vertex at 0).

    ``v``, ``d`` (= v - w) and ``f1 - f2`` (= Δv - Δw) are callables on
    ``(n, 2)`` arrays; ``grad_d`` returns ``(n, 2)``.  ``eta_minus`` and
    ``eta_plus`` are the constant η on the rays ``theta_m`` and ``theta_M``.
    """

    sector: Sector
    v: Callable
    d: Callable
    grad_d: Callable
    f_diff: Callable
    eta_minus: complex
    eta_plus: complex
    exact: bool = True


@dataclass(frozen=True)
class MasterIdentityTerms:
    s: float
    area: complex
    arc: complex
    rays: complex
    residual: float


def _u0_and_dr(s, r, th):
    z = np.exp(-np.sqrt(s * r) * np.exp(0.5j * th))
    dr = -np.sqrt(s) / (2 * np.sqrt(r)) * np.exp(0.5j * th) * z
    return z, dr


def _fixed_polar_rule(sector: Sector, s: float, n_theta: int = 96, panels: int = 48, order: int = 8):
    """Tensor rule on ``S_h`` with radial panels graded toward the vertex."""
    h = sector.h
    # concentrate panels where u0 lives, r <~ (40/delta)^2 / s
    r_star = min(h, (40 / delta_W(sector)) ** 2 / s)
    bp = np.unique(np.concatenate([graded_breakpoints(0.0, r_star, "a", 0.5, 1e-10 * r_star),
                                   np.linspace(r_star, h, max(2, panels // 4))]))
    if len(bp) < panels:
        bp = np.unique(np.concatenate([bp, np.linspace(0, h, panels - len(bp) + 2)]))
    xg, wg = gauss_legendre(order)
    a, b = bp[:-1], bp[1:]
    r = (a[:, None] + (b - a)[:, None] * xg[None]).ravel()
    wr = ((b - a)[:, None] * wg[None]).ravel()
    xt, wt = gauss_legendre(n_theta)
    th = sector.theta_m + sector.opening * xt
    wth = sector.opening * wt
    return r, wr, th, wth


def master_identity_terms(fields: CornerFields, s: float) -> MasterIdentityTerms:
    """Evaluate ``∫_S u0 (f1 - f2)``, the arc term and the ray term for one ``s``.

    Residual: ``|area - arc + rays| / (|area| + |arc| + |rays|)`` where
    ``rays = ∫_{Γ±} η u0 v``.
    """
    sec = fields.sector
    h = sec.h
    if fields.exact:
        def area_f(x1, x2):
            x = np.column_stack([x1, x2])
            r, th = np.hypot(x1, x2), np.arctan2(x2, x1)
            return _u0_and_dr(s, r, th)[0] * fields.f_diff(x)

        area = polar_quad(area_f, sec.theta_m, sec.theta_M, h, epsabs=1e-300, epsrel=1e-12)
    else:
        r, wr, th, wth = _fixed_polar_rule(sec, s)
        R, T = np.meshgrid(r, th, indexing="ij")
        pts = np.column_stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()])
        vals = _u0_and_dr(s, R.ravel(), T.ravel())[0] * fields.f_diff(pts)
        area = complex(np.sum(vals * (np.outer(wr * r, wth)).ravel()))

    def arc_int(ths):
        pts = h * np.column_stack([np.cos(ths), np.sin(ths)])
        z, dr = _u0_and_dr(s, np.full(len(ths), h), ths)
        nrm = np.column_stack([np.cos(ths), np.sin(ths)])
        dn = np.sum(fields.grad_d(pts) * nrm, axis=1)
        return (z * dn - fields.d(pts) * dr) * h

    if fields.exact:
        arc = complex(gk_quad(arc_int, sec.theta_m, sec.theta_M, epsabs=1e-300, epsrel=1e-13))
    else:
        xt, wt = gauss_legendre(256)
        ths = sec.theta_m + sec.opening * xt
        arc = complex(np.sum(arc_int(ths) * wt) * sec.opening)

    rays = 0j
    for th, eta in ((sec.theta_m, fields.eta_minus), (sec.theta_M, fields.eta_plus)):
        if eta == 0:
            continue
        e = np.array([math.cos(th), math.sin(th)])

        def ray(r, e=e, th=th):
            return _u0_and_dr(s, r, np.full(len(r), th))[0] * fields.v(np.outer(r, e))

        if fields.exact:
            val = gk_quad(ray, 0.0, h, epsabs=1e-300, epsrel=1e-13, grade="a")
        else:
            r, wr, _, _ = _fixed_polar_rule(sec, s)
            val = np.sum(ray(r) * wr)
        rays += eta * complex(val)
    den = abs(area) + abs(arc) + abs(rays)
    res = abs(area - arc + rays) / den if den > 0 else 0.0
    return MasterIdentityTerms(float(s), complex(area), complex(arc), complex(rays), float(res))


def corner_fields_from_pair(pair: EigenPair, corner: int, h: float) -> CornerFields:
    """Build corner data from a P1 eigenpair, using ``f1 - f2 = -k² v + k² q w``."""
    poly = pair.medium.domain
    if not isinstance(poly, Polygon):
        raise ValueError("corner data needs a polygonal domain")
    vertex, rot, sector = poly.corner_sector(corner, h)
    c, sn = math.cos(rot), math.sin(rot)
    Rm = np.array([[c, -sn], [sn, c]])
    loc = fem.PointLocator(pair.mesh)
    grads_d = fem.gradients(pair.mesh, pair.v - pair.w)
    k2 = complex(pair.k) ** 2
    qt = pair.medium.q_at(vertex[None])[0]

    def to_global(x):
        return vertex + x @ Rm.T

    def interp(fld):
        return lambda x: loc.interpolate(fld, _clip_inside(to_global(x), vertex))

    def _clip_inside(pts, v0):
        # pull points a hair toward the vertex so points on edges locate robustly
        return v0 + (pts - v0) * (1 - 1e-12)

    def grad_d(x):
        idx, _ = loc.locate(_clip_inside(to_global(x), vertex))
        if np.any(idx < 0):
            raise ValueError("corner sector leaves the mesh; reduce h")
        return grads_d[idx] @ Rm

    vf, wf = interp(pair.v), interp(pair.w)
    return CornerFields(sector, vf, lambda x: vf(x) - wf(x), grad_d,
                        lambda x: -k2 * vf(x) + k2 * qt * wf(x),
                        pair.medium.eta_at((corner - 1) % len(poly)),
                        pair.medium.eta_at(corner), exact=False)


def master_identity_residual(pair_or_fields, s_grid: Sequence[float], *, corner: int = 0,
                             h: float | None = None) -> list[MasterIdentityTerms]:
    """Per-``s`` relative residual of the integral identity on a corner sector.

    Accepts :class:`CornerFields` (analytic data) or an :class:`EigenPair`
    on a polygon (P1 data at ``corner`` with sector radius ``h``).
    """
    if isinstance(pair_or_fields, EigenPair):
        if h is None:
            raise ValueError("h is required for an eigenpair")
        fields = corner_fields_from_pair(pair_or_fields, corner, h)
    else:
        fields = pair_or_fields
    return [master_identity_terms(fields, s) for s in s_grid]


# -- IO ----------------------------------------------------------------------

def save_pair(pair: EigenPair, directory, stem: str = "pair") -> list[Path]:
    """Write the mesh, nodal fields and a JSON summary; returns the paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = [d / f"{stem}_mesh.txt", d / f"{stem}_fields.txt", d / f"{stem}.json"]
    pair.mesh.save(paths[0])
    lines = ["v_re v_im w_re w_im"] + [f"{a.real!r} {a.imag!r} {b.real!r} {b.imag!r}"
                                       for a, b in zip(pair.v, pair.w)]
    paths[1].write_text("\n".join(lines) + "\n")
    paths[2].write_text(json.dumps(pair.summary(), sort_keys=True, indent=1) + "\n")
    return paths
