"""Forward conductive scattering on a truncated disk with an exact modal DtN map.

Total field ``u`` solves ``Δu + k² q u = 0`` in Ω, ``Δu + k² u = 0`` outside,
``u+ = u-`` and ``∂_ν u+ + η u+ = ∂_ν u-`` on ∂Ω, with ``u - u^i`` outgoing.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import h1vp, hankel1, jv, jvp

from . import fem
from .geometry import (OUTER_TAG, Disk, Polygon, TriMesh, ball_average,
                       circle_projector, triangulate_with_inclusion)
from .teig import ConductiveMedium


class AliasingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class IncidentWave:
    """Plane wave ``amplitude * exp(i k (x - origin)·d)``."""

    k: float
    d: tuple = (1.0, 0.0)
    amplitude: complex = 1.0
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be positive")
        d = np.asarray(self.d, float)
        if abs(np.linalg.norm(d) - 1) > 1e-12:
            raise ValueError("direction must be a unit vector")
        object.__setattr__(self, "d", (float(d[0]), float(d[1])))

    @classmethod
    def from_angle(cls, k: float, angle: float, **kw) -> "IncidentWave":
        return cls(k, (math.cos(angle), math.sin(angle)), **kw)

    @property
    def angle(self) -> float:
        return math.atan2(self.d[1], self.d[0])

    @property
    def phase(self) -> complex:
        """Factor relative to a plane wave referenced at the origin."""
        return complex(self.amplitude * np.exp(-1j * self.k * np.dot(self.origin, self.d)))

    def value(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return self.phase * np.exp(1j * self.k * (x @ np.asarray(self.d)))

    def grad(self, x) -> np.ndarray:
        return 1j * self.k * self.value(x)[:, None] * np.asarray(self.d)[None, :]

    def modes(self, R: float, orders: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Fourier coefficients of the trace and of ``∂_r`` on ``|x| = R`` (Jacobi–Anger)."""
        n = np.asarray(orders)
        base = self.phase * (1j ** n) * np.exp(-1j * n * self.angle)
        return base * jv(n, self.k * R), base * self.k * jvp(n, self.k * R)


@dataclass(frozen=True)
class DtnRing:
    R: float
    N: int

    def __post_init__(self):
        if not self.R > 0 or self.N < 0:
            raise ValueError("need R > 0 and N >= 0")

    @classmethod
    def for_wavenumber(cls, k: float, R: float, margin: int = 12) -> "DtnRing":
        return cls(R, int(math.ceil(k * R)) + margin)

    @property
    def orders(self) -> np.ndarray:
        return np.arange(-self.N, self.N + 1)

    def symbol(self, k: float) -> np.ndarray:
        """``T_n = k H_n'(kR) / H_n(kR)`` for ``n = -N..N``."""
        n = self.orders
        return k * h1vp(n, k * self.R) / hankel1(n, k * self.R)


def _pow2_at_least(n: int) -> int:
    return 1 << max(0, int(math.ceil(math.log2(max(n, 1)))))


@dataclass(frozen=True, eq=False)
class FarField:
    """Far-field samples at angles ``2π j / M``, ``M`` a power of two."""

    k: float
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, complex).reshape(-1)
        m = len(s)
        if m == 0 or m & (m - 1):
            raise ValueError("sample count must be a power of two")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def angles(self) -> np.ndarray:
        m = len(self.samples)
        return 2 * np.pi * np.arange(m) / m

    @classmethod
    def from_modes(cls, k: float, orders: np.ndarray, coeffs: np.ndarray, n_samples: int | None = None):
        n_samples = n_samples or _pow2_at_least(4 * int(np.max(np.abs(orders))))
        n_samples = _pow2_at_least(n_samples)
        th = 2 * np.pi * np.arange(n_samples) / n_samples
        return cls(k, np.exp(1j * np.outer(th, orders)) @ coeffs)

    def coefficients(self) -> tuple[np.ndarray, np.ndarray]:
        m = len(self.samples)
        c = np.fft.fft(self.samples) / m
        orders = np.fft.fftfreq(m, 1.0 / m).astype(int)
        idx = np.argsort(orders)
        return orders[idx], c[idx]

    def resample(self, n_samples: int) -> "FarField":
        orders, c = self.coefficients()
        keep = np.abs(orders) < len(self.samples) // 2
        return FarField.from_modes(self.k, orders[keep], c[keep], n_samples)

    def __add__(self, other):
        if isinstance(other, FarField):
            return FarField(self.k, self.samples + other.samples)
        return FarField(self.k, self.samples + other)

    def __mul__(self, a):
        return FarField(self.k, self.samples * a)

    __rmul__ = __mul__

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# rows {len(self.samples)} k {self.k!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["theta", "re", "im"])
        for t, z in zip(self.angles, self.samples):
            w.writerow([repr(float(t)), repr(float(z.real)), repr(float(z.imag))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, k: float | None = None) -> "FarField":
        lines = text.splitlines()
        if lines and lines[0].startswith("#") and k is None:
            parts = lines[0].split()
            if "k" in parts:
                k = float(parts[parts.index("k") + 1])
        rows = list(csv.DictReader(ln for ln in lines if not ln.startswith("#")))
        return cls(float(k or 0.0), np.array([complex(float(r["re"]), float(r["im"])) for r in rows]))


FARFIELD_PREFACTOR = lambda k: np.sqrt(2 / (np.pi * k)) * np.exp(-1j * np.pi / 4)


# -- meshing ---------------------------------------------------------------

def scattering_mesh(medium: ConductiveMedium, R: float, target_h: float, *, size_fn=None) -> TriMesh:
    """Mesh of ``B_R`` resolving the scatterer boundary as interface edges."""
    return triangulate_with_inclusion(medium.domain, R, target_h, size_fn=size_fn)


def scattering_projector(medium: ConductiveMedium, R: float):
    radii = {OUTER_TAG: R}
    if isinstance(medium.domain, Disk):
        if medium.domain.center != (0.0, 0.0):
            return _two_circle_projector(R, medium.domain)
        radii[0] = medium.domain.radius
    return circle_projector(radii)


def _two_circle_projector(R, disk):
    outer = circle_projector({OUTER_TAG: R})
    inner = circle_projector({0: disk.radius}, disk.center)

    def project(points, tags):
        out = outer(points, tags)
        sel = tags == 0
        out[sel] = inner(points[sel], tags[sel])
        return out

    return project


# -- forward solve ---------------------------------------------------------

def _ring_nodes(mesh: TriMesh):
    edges = mesh.boundary_edges[mesh.edge_tags == OUTER_TAG]
    nodes = np.unique(edges)
    th = np.arctan2(mesh.nodes[nodes, 1], mesh.nodes[nodes, 0])
    order = np.argsort(th)
    return nodes[order], th[order], edges


def _hat_modes(th: np.ndarray, orders: np.ndarray) -> np.ndarray:
    """``c_n(φ_j) = (1/2π) ∫ φ_j(θ) e^{-inθ} dθ`` for hats piecewise linear in θ."""
    m = len(th)
    th_next = np.roll(th, -1)
    gaps = (th_next - th) % (2 * np.pi)
    xg, wg = np.polynomial.legendre.leggauss(8)
    tg, wg = 0.5 * (xg + 1), 0.5 * wg
    out = np.zeros((m, len(orders)), complex)
    for t, w in zip(tg, wg):
        ang = th[:, None] + t * gaps[:, None]
        e = np.exp(-1j * ang * orders[None, :]) * (w * gaps)[:, None] / (2 * np.pi)
        out += (1 - t) * e  # gap j seen from its left node j
        out += t * np.roll(e, 1, axis=0)  # gap j-1 seen from its right node j
    return out


@dataclass(frozen=True, eq=False)
class ForwardSolution:
    mesh: TriMesh
    u: np.ndarray
    medium: ConductiveMedium
    inc: IncidentWave
    ring: DtnRing

    @property
    def scattered(self) -> np.ndarray:
        return self.u - self.inc.value(self.mesh.nodes)

    def ring_trace(self) -> tuple[np.ndarray, np.ndarray]:
        nodes, th, _ = _ring_nodes(self.mesh)
        return th, self.scattered[nodes]

    def far_field(self, n_samples: int | None = None) -> FarField:
        th, trace = self.ring_trace()
        return far_field_from_ring(trace, self.ring, self.inc.k, n_samples=n_samples, angles=th)

    def ring_flux(self) -> complex:
        """``∮_{|x|=R} conj(u) ∂_r u`` from the modal representation of the total field."""
        nodes, th, _ = _ring_nodes(self.mesh)
        n = self.ring.orders
        c = _modes_from_samples(self.u[nodes], th, n)
        ci, dci = self.inc.modes(self.ring.R, n)
        d = dci + self.ring.symbol(self.inc.k) * (c - ci)
        return complex(2 * np.pi * self.ring.R * np.sum(np.conj(c) * d))


def _modes_from_samples(values, th, orders):
    m = len(th)
    if np.max(np.abs(np.diff(np.unwrap(th)) - 2 * np.pi / m)) > 1e-9:
        raise ValueError("ring samples must be uniformly spaced")
    phase0 = th[0]
    c = np.fft.fft(values) / m
    idx = np.mod(orders, m)
    return c[idx] * np.exp(-1j * orders * phase0)


def solve_forward(medium: ConductiveMedium, inc: IncidentWave, mesh: TriMesh,
                  ring: DtnRing | None = None) -> ForwardSolution:
    """P1 solution of the conductive scattering problem on a mesh of ``B_R``."""
    nodes, th, ring_edges = _ring_nodes(mesh)
    R = float(np.mean(np.hypot(*mesh.nodes[nodes].T)))
    if np.max(np.abs(np.hypot(*mesh.nodes[nodes].T) - R)) > 1e-9 * R:
        raise ValueError("outer boundary nodes must lie on a circle centred at the origin")
    if ring is None:
        # the DtN truncation cannot exceed what the ring nodes resolve
        ring = DtnRing.for_wavenumber(inc.k, R)
        n_res = len(nodes) // 4
        if n_res < math.ceil(inc.k * R) + 2:
            raise ValueError(f"{len(nodes)} ring nodes cannot resolve k R = {inc.k * R:.3g}; refine the ring")
        ring = DtnRing(R, min(ring.N, n_res))
    if abs(ring.R - R) > 1e-9 * R:
        raise ValueError("ring radius does not match the mesh")
    if isinstance(medium.domain, Polygon):
        extent = np.max(np.hypot(*medium.domain.points.T))
    else:
        extent = np.hypot(*medium.domain.center) + medium.domain.radius
    if extent >= R:
        raise ValueError("the ring must strictly contain the scatterer")
    k = inc.k
    centroids = mesh.nodes[mesh.triangles].mean(axis=1)
    n_tri = np.where(mesh.regions == 1, medium.q_at(centroids), 1.0)
    K = fem.stiffness(mesh)
    M = fem.mass(mesh, n_tri)
    eta = medium.eta_per_edge(mesh.interface_tags)
    E = fem.edge_mass(mesh, mesh.interface_edges, eta)
    orders = ring.orders
    T = ring.symbol(k)
    Cm = _hat_modes(th, orders)  # c_n(φ_j)
    Cp = _hat_modes(th, -orders)  # c_{-n}(φ_j)
    D_ring = 2 * np.pi * R * (Cm * T[None, :]) @ Cp.T  # D[i, j] = <T φ_j, φ_i>
    D_ring = D_ring.T
    rows = np.repeat(nodes, len(nodes))
    cols = np.tile(nodes, len(nodes))
    D = sp.coo_matrix((D_ring.ravel(), (rows, cols)), shape=K.shape).tocsr()
    S = (K - k * k * M - E - D).tocsc()
    # right-hand side: ∫ ∂_r u^i φ - <T u^i, φ>
    def dr_inc(pts, _edge):
        rhat = pts / np.linalg.norm(pts, axis=1)[:, None]
        return np.sum(inc.grad(pts) * rhat, axis=1)

    b = fem.edge_load(mesh, ring_edges, dr_inc, n_gauss=4)
    ci, _ = inc.modes(R, orders)
    tu = np.zeros(mesh.n_nodes, complex)
    tu[nodes] = 2 * np.pi * R * (Cp @ (T * ci))
    b = b - tu
    try:
        lu = spla.splu(S)
        u = lu.solve(b)
    except RuntimeError as exc:
        raise RuntimeError("singular forward system; enlarge R or N") from exc
    if not np.all(np.isfinite(u)):
        raise RuntimeError("singular forward system; enlarge R or N")
    return ForwardSolution(mesh, u, medium, inc, ring)


# -- far field -------------------------------------------------------------

def far_field_from_ring(trace, ring: DtnRing, k: float, *, n_samples: int | None = None,
                        angles: np.ndarray | None = None) -> FarField:
    """Far field from the scattered trace on ``|x| = R`` sampled uniformly.

    ``u^∞_n = c_n sqrt(2/(πk)) e^{-iπ/4} (-i)^n / H_n(kR)``; warns if more
    than 1% of the trace energy sits in the top quartile of resolved modes.
    """
    trace = np.asarray(trace, complex)
    m = len(trace)
    if m < 4 * ring.N:
        raise ValueError(f"need at least 4N = {4 * ring.N} trace samples, got {m}")
    th = 2 * np.pi * np.arange(m) / m if angles is None else np.asarray(angles)
    half = m // 2
    all_orders = np.arange(-half + 1, half)
    c_all = _modes_from_samples(trace, th, all_orders)
    energy = np.abs(c_all) ** 2
    top = np.abs(all_orders) >= 3 * half // 4
    if energy.sum() > 0 and energy[top].sum() > 0.01 * energy.sum():
        warnings.warn("far-field trace looks aliased: >1% energy in the top quartile of modes",
                      AliasingWarning, stacklevel=2)
    n = ring.orders
    c = _modes_from_samples(trace, th, n)
    coeff = c * FARFIELD_PREFACTOR(k) * (-1j) ** n / hankel1(n, k * ring.R)
    return FarField.from_modes(k, n, coeff, n_samples or _pow2_at_least(4 * ring.N))


# -- Mie series oracle -----------------------------------------------------

@dataclass(frozen=True)
class DiskSeries:
    orders: np.ndarray
    a: np.ndarray
    b: np.ndarray
    far_field: FarField

    def scattered(self, x, k: float) -> np.ndarray:
        x = np.atleast_2d(x)
        r, th = np.hypot(x[:, 0], x[:, 1]), np.arctan2(x[:, 1], x[:, 0])
        return np.sum(self.b[None] * hankel1(self.orders[None], k * r[:, None])
                      * np.exp(1j * np.outer(th, self.orders)), axis=1)


def disk_mode_coefficients(k: float, R: float, q: complex, eta: complex, n: np.ndarray):
    """``(a_n, b_n)`` for incidence along +x1 with unit amplitude."""
    k1 = k * np.sqrt(complex(q))
    J, Jp = jv(n, k * R), jvp(n, k * R)
    H, Hp = hankel1(n, k * R), h1vp(n, k * R)
    J1, J1p = jv(n, k1 * R), jvp(n, k1 * R)
    # [[J1, -H], [k1 J1', -(k H' + eta H)]] [a, b] = i^n [J, k J' + eta J]
    det = -J1 * (k * Hp + eta * H) + H * k1 * J1p
    scale = np.abs(J1) * np.abs(k * Hp + eta * H) + np.abs(H * k1 * J1p)
    bad = np.abs(det) <= 1e-13 * scale
    if np.any(bad):
        raise ZeroDivisionError(f"singular mode system for n = {n[bad].tolist()}")
    rhs1 = (1j ** n) * J
    rhs2 = (1j ** n) * (k * Jp + eta * J)
    a = (rhs1 * -(k * Hp + eta * H) + H * rhs2) / det
    b = (J1 * rhs2 - k1 * J1p * rhs1) / det
    return a, b


def disk_series_forward(medium: ConductiveMedium, inc: IncidentWave, *, n_max: int | None = None,
                        n_samples: int | None = None) -> DiskSeries:
    """Separation-of-variables solution for a centred conductive disk."""
    disk = medium.domain
    if not isinstance(disk, Disk) or disk.center != (0.0, 0.0):
        raise ValueError("the series oracle needs a disk centred at the origin")
    if medium.q_pieces:
        raise ValueError("the series oracle needs constant q")
    k, R = inc.k, disk.radius
    n_max = n_max or int(math.ceil(abs(k * np.sqrt(complex(medium.q))) * R)) + 30
    n = np.arange(-n_max, n_max + 1)
    a, b = disk_mode_coefficients(k, R, medium.q, medium.eta_at(0), n)
    rot = inc.phase * np.exp(-1j * n * inc.angle)
    a, b = a * rot, b * rot
    coeff = FARFIELD_PREFACTOR(k) * b * (-1j) ** n
    ff = FarField.from_modes(k, n, coeff, n_samples or _pow2_at_least(4 * n_max))
    return DiskSeries(n, a, b, ff)


# -- admissibility -----------------------------------------------------------

@dataclass(frozen=True)
class NonvanishingReport:
    min_average: float
    argmin: tuple
    rho: float
    threshold: float
    admissible: bool

    def to_dict(self) -> dict:
        return {"min_average": self.min_average, "argmin": list(self.argmin), "rho": self.rho,
                "threshold": self.threshold, "admissible": self.admissible}


def nonvanishing_check(u: np.ndarray, mesh: TriMesh, probe_points, *, rho: float = 0.05,
                       threshold: float = 1e-2) -> NonvanishingReport:
    """Minimum over probe points of the ball average of ``|u|`` at radius ``rho``."""
    pts = np.atleast_2d(np.asarray(probe_points, float))
    vals = np.array([ball_average(mesh, u, p, rho) for p in pts])
    j = int(np.argmin(vals))
    return NonvanishingReport(float(vals[j]), tuple(map(float, pts[j])), rho, threshold,
                              bool(vals[j] > threshold))


def probe_grid(domain: Polygon | Disk, spacing: float) -> np.ndarray:
    """Grid points in the closed domain plus its vertices."""
    if isinstance(domain, Polygon):
        p = domain.points
        lo, hi = p.min(axis=0), p.max(axis=0)
    else:
        c = np.asarray(domain.center)
        lo, hi = c - domain.radius, c + domain.radius
    xs = np.arange(lo[0], hi[0] + 1e-12, spacing)
    ys = np.arange(lo[1], hi[1] + 1e-12, spacing)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    pts = pts[domain.contains(pts)]
    if isinstance(domain, Polygon):
        pts = np.vstack([pts, domain.points])
    return pts


def eta_from_physics(omega: float, gamma: float, mu0: float, eps0: float) -> tuple[float, complex]:
    """``k = ω sqrt(ε0 μ0)`` and ``η = i ω γ μ0``."""
    if omega < 0 or not (gamma > 0 and mu0 > 0 and eps0 > 0):
        raise ValueError("need omega >= 0 and positive gamma, mu0, eps0")
    return omega * math.sqrt(eps0 * mu0), 1j * omega * gamma * mu0
