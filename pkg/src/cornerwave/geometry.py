"""Sectors, polygons and disks, triangular meshing and shrinking-ball averages."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np

# Tags >= 0 index polygon edges (or 0 for a disk).  The outer truncation
# circle of a scattering mesh uses OUTER_TAG.
OUTER_TAG = -1
_MARKER_OFFSET = 2  # Triangle reserves markers 0 and 1


@dataclass(frozen=True)
class Sector:
    """Open sector ``theta_m < arg x < theta_M`` truncated at radius ``h``.

    ``h = inf`` denotes the full infinite sector W.
    """

    theta_m: float
    theta_M: float
    h: float = math.inf

    def __post_init__(self):
        if not (-math.pi < self.theta_m < self.theta_M < math.pi):
            raise ValueError(
                f"need -pi < theta_m < theta_M < pi, got ({self.theta_m}, {self.theta_M})")
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")

    @property
    def opening(self) -> float:
        return self.theta_M - self.theta_m

    @property
    def delta_W(self) -> float:
        return delta_W(self)

    def area(self) -> float:
        return 0.5 * self.opening * self.h ** 2

    def with_h(self, h: float) -> "Sector":
        return Sector(self.theta_m, self.theta_M, h)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        r = np.hypot(x[:, 0], x[:, 1])
        th = np.arctan2(x[:, 1], x[:, 0])
        return (r > 0) & (r < self.h) & (th > self.theta_m) & (th < self.theta_M)


def delta_W(sector: Sector) -> float:
    """Decay constant ``-max cos(theta/2 + pi)`` over the closed opening.

    ``cos(theta/2)`` is concave on (-pi, pi), so the minimum sits at an
    endpoint.
    """
    return min(math.cos(sector.theta_m / 2), math.cos(sector.theta_M / 2))


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


@dataclass(frozen=True)
class Polygon:
    """Simple counter-clockwise polygon.  Edge ``i`` joins vertex ``i`` to ``i+1``."""

    vertices: tuple

    def __init__(self, vertices):
        pts = np.asarray(vertices, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
            raise ValueError("polygon needs at least 3 two-dimensional vertices")
        object.__setattr__(self, "vertices", tuple(map(tuple, pts)))
        n = len(pts)
        for i in range(n):
            a, b, c = pts[i - 1], pts[i], pts[(i + 1) % n]
            if np.linalg.norm(c - b) == 0:
                raise ValueError(f"repeated vertex at index {i}")
            cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
            if abs(cross) <= 1e-12 * np.linalg.norm(b - a) * np.linalg.norm(c - b):
                raise ValueError(f"collinear vertices around index {i}")
        if self.signed_area() <= 0:
            raise ValueError("polygon must be counter-clockwise with positive area")
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_intersect(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]):
                    raise ValueError("polygon is self-intersecting")

    @property
    def points(self) -> np.ndarray:
        return np.array(self.vertices)

    def __len__(self) -> int:
        return len(self.vertices)

    def signed_area(self) -> float:
        p = np.asarray(self.vertices)
        x, y = p[:, 0], p[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def area(self) -> float:
        return abs(self.signed_area())

    def interior_angle(self, i: int) -> float:
        p = self.points
        n = len(p)
        prev, cur, nxt = p[i - 1], p[i], p[(i + 1) % n]
        a1 = math.atan2(nxt[1] - cur[1], nxt[0] - cur[0])
        a2 = math.atan2(prev[1] - cur[1], prev[0] - cur[0])
        return (a2 - a1) % (2 * math.pi)

    def edge_lengths(self) -> np.ndarray:
        p = self.points
        return np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Even-odd point-in-polygon test (boundary points unspecified)."""
        x = np.atleast_2d(np.asarray(x, float))
        p = self.points
        inside = np.zeros(len(x), dtype=bool)
        for a, b in zip(p, np.roll(p, -1, axis=0)):
            cond = (a[1] > x[:, 1]) != (b[1] > x[:, 1])
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = a[0] + (x[:, 1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            inside ^= cond & (x[:, 0] < xint)
        return inside

    def distance_to_boundary(self, x: np.ndarray, skip: Sequence[int] = ()) -> np.ndarray:
        """Distance from points to the polygon edges, ignoring edges in ``skip``."""
        x = np.atleast_2d(np.asarray(x, float))
        p = self.points
        best = np.full(len(x), np.inf)
        for i, (a, b) in enumerate(zip(p, np.roll(p, -1, axis=0))):
            if i in skip:
                continue
            ab = b - a
            t = np.clip(((x - a) @ ab) / (ab @ ab), 0.0, 1.0)
            best = np.minimum(best, np.linalg.norm(x - (a + t[:, None] * ab), axis=1))
        return best

    def corner_sector(self, i: int, h: float) -> tuple[np.ndarray, float, Sector]:
        """Local frame of corner ``i``.

        Returns ``(vertex, rotation, sector)`` where ``rotation`` is the angle
        that maps the symmetric local sector back to global coordinates:
        ``x_global = vertex + R(rotation) x_local``.
        """
        p = self.points
        cur, nxt = p[i], p[(i + 1) % len(p)]
        alpha = self.interior_angle(i)
        start = math.atan2(nxt[1] - cur[1], nxt[0] - cur[0])
        rotation = start + alpha / 2
        return cur, rotation, Sector(-alpha / 2, alpha / 2, h)


@dataclass(frozen=True)
class Disk:
    radius: float = 1.0
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("disk radius must be positive")

    def area(self) -> float:
        return math.pi * self.radius ** 2

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        return np.hypot(x[:, 0] - self.center[0], x[:, 1] - self.center[1]) < self.radius


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming triangle mesh.

    ``boundary_edges`` lie on the outer boundary with ``edge_tags``;
    ``interface_edges`` (optional) separate region 1 (the scatterer) from
    region 0.  ``regions`` holds one integer label per triangle.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    regions: np.ndarray = None
    interface_edges: np.ndarray = None
    interface_tags: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", _readonly(self.nodes, float).reshape(-1, 2))
        tris = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        p = self.nodes
        d = (p[tris[:, 1]] - p[tris[:, 0]], p[tris[:, 2]] - p[tris[:, 0]])
        signed = 0.5 * (d[0][:, 0] * d[1][:, 1] - d[0][:, 1] * d[1][:, 0])
        flip = signed < 0
        tris[flip] = tris[flip][:, [0, 2, 1]]
        object.__setattr__(self, "triangles", _readonly(tris, np.int64))
        object.__setattr__(self, "boundary_edges", _readonly(self.boundary_edges, np.int64).reshape(-1, 2))
        object.__setattr__(self, "edge_tags", _readonly(self.edge_tags, np.int64).reshape(-1))
        regions = np.zeros(len(tris), np.int64) if self.regions is None else self.regions
        object.__setattr__(self, "regions", _readonly(regions, np.int64).reshape(-1))
        ie = np.zeros((0, 2)) if self.interface_edges is None else self.interface_edges
        it = np.zeros(0) if self.interface_tags is None else self.interface_tags
        object.__setattr__(self, "interface_edges", _readonly(ie, np.int64).reshape(-1, 2))
        object.__setattr__(self, "interface_tags", _readonly(it, np.int64).reshape(-1))
        self.validate()

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        p, t = self.nodes, self.triangles
        d1 = p[t[:, 1]] - p[t[:, 0]]
        d2 = p[t[:, 2]] - p[t[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def max_edge_length(self) -> float:
        e = self.edges()
        return float(np.max(np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1)))

    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes()] = False
        return np.flatnonzero(mask)

    def validate(self) -> None:
        if np.any(self.areas() <= 0):
            raise ValueError("mesh has degenerate triangles")
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e = np.sort(e, axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise ValueError("non-manifold edge in mesh")
        if len(self.edge_tags) != len(self.boundary_edges):
            raise ValueError("edge_tags length does not match boundary_edges")
        if len(self.boundary_edges):
            once = {tuple(x) for x in uniq[counts == 1]}
            for be in np.sort(self.boundary_edges, axis=1):
                if tuple(be) not in once:
                    raise ValueError(f"boundary edge {tuple(be)} is not on exactly one triangle")

    def triangle_diameters(self) -> np.ndarray:
        p, t = self.nodes, self.triangles
        l0 = np.linalg.norm(p[t[:, 1]] - p[t[:, 0]], axis=1)
        l1 = np.linalg.norm(p[t[:, 2]] - p[t[:, 1]], axis=1)
        l2 = np.linalg.norm(p[t[:, 0]] - p[t[:, 2]], axis=1)
        return np.maximum(np.maximum(l0, l1), l2)

    # -- text format ---------------------------------------------------
    def to_text(self) -> str:
        lines = [f"nodes {self.n_nodes} triangles {self.n_triangles} boundary {len(self.boundary_edges)}"]
        lines += [f"{x!r} {y!r}" for x, y in self.nodes.tolist()]
        lines += [f"{i} {j} {k}" for i, j, k in self.triangles.tolist()]
        lines += [f"{i} {j} {tag}" for (i, j), tag in zip(self.boundary_edges.tolist(), self.edge_tags.tolist())]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "TriMesh":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = lines[0].split()
        if head[0::2] != ["nodes", "triangles", "boundary"]:
            raise ValueError(f"bad mesh header: {lines[0]!r}")
        n, t, b = (int(v) for v in head[1::2])
        if len(lines) != 1 + n + t + b:
            raise ValueError("mesh record count does not match header")
        nodes = np.array([[float(v) for v in ln.split()] for ln in lines[1:1 + n]]).reshape(-1, 2)
        tris = np.array([[int(v) for v in ln.split()] for ln in lines[1 + n:1 + n + t]]).reshape(-1, 3)
        bnd = np.array([[int(v) for v in ln.split()] for ln in lines[1 + n + t:]]).reshape(-1, 3)
        return cls(nodes, tris, bnd[:, :2], bnd[:, 2])

    @classmethod
    def load(cls, path) -> "TriMesh":
        return cls.from_text(Path(path).read_text())


# -- meshing -------------------------------------------------------------

def _split_loop(points: np.ndarray, tags: np.ndarray, target_h: float):
    """Subdivide each edge of a closed loop into pieces no longer than target_h."""
    out_pts, out_tags = [], []
    n = len(points)
    for i in range(n):
        a, b = points[i], points[(i + 1) % n]
        m = max(1, int(math.ceil(np.linalg.norm(b - a) / target_h - 1e-9)))
        for j in range(m):
            out_pts.append(a + (b - a) * j / m)
            out_tags.append(tags[i])
    return np.array(out_pts), np.array(out_tags)


def _circle_loop(disk: Disk, target_h: float, min_nodes: int = 12):
    n = max(min_nodes, int(math.ceil(2 * math.pi * disk.radius / target_h)))
    th = 2 * math.pi * np.arange(n) / n
    pts = np.column_stack([disk.center[0] + disk.radius * np.cos(th),
                           disk.center[1] + disk.radius * np.sin(th)])
    return pts


def _area_limit(h: float) -> float:
    return math.sqrt(3) / 4 * h * h


def _run_triangle(tri_in: dict, target_h: float, size_fn, opts: str):
    import triangle

    out = triangle.triangulate(tri_in, f"{opts}a{_area_limit(target_h):.17g}")
    if size_fn is not None:
        for _ in range(40):
            p, t = out["vertices"], out["triangles"]
            c = p[t].mean(axis=1)
            hloc = np.minimum(target_h, np.asarray(size_fn(c), float))
            limit = np.array([_area_limit(h) for h in hloc])
            d1 = p[t[:, 1]] - p[t[:, 0]]
            d2 = p[t[:, 2]] - p[t[:, 0]]
            area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
            if np.all(area <= limit * 1.0001):
                break
            out["triangle_max_area"] = limit
            out = triangle.triangulate(out, "r" + opts + "a")
        else:
            raise RuntimeError("graded refinement did not converge")
    return out


def _boundary_from_segments(out) -> tuple[np.ndarray, np.ndarray]:
    seg = out["segments"]
    tags = out["segment_markers"].ravel() - _MARKER_OFFSET
    return seg, tags


def triangulate(domain: Polygon | Disk, target_h: float, *,
                size_fn: Callable[[np.ndarray], np.ndarray] | None = None,
                min_angle: float = 25.0, seed: int = 0) -> TriMesh:
    """Constrained-Delaunay quality mesh of a polygon or (polygonal) disk.

    Polygon vertices are always mesh nodes.  ``size_fn(points)`` optionally
    prescribes a smaller local element size, e.g. graded toward a corner.
    ``seed`` is accepted for interface stability; the mesher is deterministic.
    """
    del seed
    if not target_h > 0:
        raise ValueError("target_h must be positive")
    if isinstance(domain, Polygon):
        pts, tags = _split_loop(domain.points, np.arange(len(domain)), target_h)
        opts = f"pq{min_angle:g}"
    elif isinstance(domain, Disk):
        pts = _circle_loop(domain, target_h)
        tags = np.zeros(len(pts), np.int64)
        opts = f"pq{min_angle:g}Y"  # keep boundary nodes on the circle
    else:
        raise TypeError(f"unsupported domain {type(domain).__name__}")
    n = len(pts)
    seg = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
    tri_in = {"vertices": pts, "segments": seg, "segment_markers": (tags + _MARKER_OFFSET)[:, None]}
    out = _run_triangle(tri_in, target_h, size_fn, opts)
    seg, tags = _boundary_from_segments(out)
    return TriMesh(out["vertices"], out["triangles"], seg, tags)


def triangulate_with_inclusion(obstacle: Polygon | Disk, outer_radius: float, target_h: float, *,
                               size_fn=None, min_angle: float = 25.0) -> TriMesh:
    """Mesh of the disk ``B_R`` with ``obstacle`` resolved as region 1.

    Outer circle edges get ``OUTER_TAG``; obstacle edges are returned as
    interface edges tagged by polygon edge index (0 for a disk obstacle).
    """
    outer = _circle_loop(Disk(outer_radius), target_h)
    if isinstance(obstacle, Polygon):
        inner, itags = _split_loop(obstacle.points, np.arange(len(obstacle)), target_h)
        seed_pt = _interior_point(obstacle)
    else:
        inner = _circle_loop(obstacle, target_h)
        itags = np.zeros(len(inner), np.int64)
        seed_pt = np.array(obstacle.center, float)
    if np.max(np.hypot(inner[:, 0], inner[:, 1])) >= outer_radius:
        raise ValueError("obstacle must lie strictly inside the truncation circle")
    no, ni = len(outer), len(inner)
    seg_o = np.column_stack([np.arange(no), (np.arange(no) + 1) % no])
    seg_i = no + np.column_stack([np.arange(ni), (np.arange(ni) + 1) % ni])
    markers = np.concatenate([np.full(no, OUTER_TAG), itags]) + _MARKER_OFFSET
    tri_in = {
        "vertices": np.vstack([outer, inner]),
        "segments": np.vstack([seg_o, seg_i]),
        "segment_markers": markers[:, None],
        "regions": np.array([[seed_pt[0], seed_pt[1], 1, 0],
                             [0.5 * (outer_radius + np.max(np.hypot(inner[:, 0], inner[:, 1]))), 0.0, 2, 0]]),
    }
    # Y keeps the outer ring nodes on the circle
    opts = f"pq{min_angle:g}AY"
    out = _run_triangle(tri_in, target_h, size_fn, opts)
    regions = np.rint(out["triangle_attributes"].ravel()).astype(np.int64)
    regions = np.where(regions == 1, 1, 0)
    seg, tags = _boundary_from_segments(out)
    is_outer = tags == OUTER_TAG
    return TriMesh(out["vertices"], out["triangles"], seg[is_outer], tags[is_outer],
                   regions=regions, interface_edges=seg[~is_outer], interface_tags=tags[~is_outer])


def _interior_point(poly: Polygon) -> np.ndarray:
    """A point strictly inside the polygon (ear-based)."""
    p = poly.points
    n = len(p)
    for i in range(n):
        a, b, c = p[i - 1], p[i], p[(i + 1) % n]
        cand = (a + b + c) / 3
        if poly.contains(cand[None])[0] and poly.distance_to_boundary(cand[None])[0] > 0:
            return cand
    raise ValueError("could not find an interior point")


def refine_uniform(mesh: TriMesh, project: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None) -> TriMesh:
    """Red refinement: split every triangle into four.

    ``project(points, tags)`` maps new midpoints on tagged curves (boundary
    or interface) onto the exact geometry; tags follow the parent edges.
    """
    p, t = mesh.nodes, mesh.triangles
    e_all = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e_sorted = np.sort(e_all, axis=1)
    uniq, inv = np.unique(e_sorted, axis=0, return_inverse=True)
    inv = inv.ravel()
    mids = 0.5 * (p[uniq[:, 0]] + p[uniq[:, 1]])
    key = {tuple(e): i for i, e in enumerate(uniq.tolist())}

    def split(edges, tags):
        if len(edges) == 0:
            return np.zeros((0, 2), np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64)
        idx = np.array([key[tuple(sorted(e))] for e in edges.tolist()])
        m = len(p) + idx
        new_e = np.concatenate([np.column_stack([edges[:, 0], m]), np.column_stack([m, edges[:, 1]])])
        return new_e, np.concatenate([tags, tags]), idx

    nb, tb, ib = split(mesh.boundary_edges, mesh.edge_tags)
    ni, ti, ii = split(mesh.interface_edges, mesh.interface_tags)
    if project is not None:
        for idx, tags in ((ib, mesh.edge_tags), (ii, mesh.interface_tags)):
            if len(idx):
                mids[idx] = project(mids[idx], tags)
    m = len(p) + inv.reshape(3, -1).T  # midpoints of edges (01, 12, 20)
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
    new_t = np.concatenate([
        np.column_stack([a, m01, m20]),
        np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]),
        np.column_stack([m01, m12, m20]),
    ])
    regions = np.tile(mesh.regions, 4)
    return TriMesh(np.vstack([p, mids]), new_t, nb, tb, regions=regions,
                   interface_edges=ni, interface_tags=ti)


def circle_projector(radii: dict[int, float], center=(0.0, 0.0)):
    """Projector for :func:`refine_uniform` snapping tagged midpoints onto circles."""
    cx, cy = center

    def project(points, tags):
        out = points.copy()
        for tag, rad in radii.items():
            sel = tags == tag
            if np.any(sel):
                d = points[sel] - (cx, cy)
                out[sel] = (cx, cy) + rad * d / np.linalg.norm(d, axis=1)[:, None]
        return out

    return project


def corner_grading(vertices: np.ndarray, h_min: float, growth: float = 0.25):
    """Size function ``h(x) = h_min + growth * dist(x, nearest vertex)``."""
    v = np.atleast_2d(np.asarray(vertices, float))

    def size(points):
        d = np.min(np.linalg.norm(points[:, None, :] - v[None, :, :], axis=2), axis=1)
        return h_min + growth * d

    return size


# -- shrinking-ball averages -------------------------------------------

def _subdivision_centroids(depth: int) -> np.ndarray:
    """Barycentric centroids of the 4**depth congruent sub-triangles."""
    tris = [np.eye(3)]
    for _ in range(depth):
        nxt = []
        for T in tris:
            a, b, c = T
            ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
            nxt += [np.array([a, ab, ca]), np.array([ab, b, bc]),
                    np.array([ca, bc, c]), np.array([ab, bc, ca])]
        tris = nxt
    return np.array([T.mean(axis=0) for T in tris])


_LEAF_DEPTH = 4
_LEAVES = _subdivision_centroids(_LEAF_DEPTH)
_INNER = _subdivision_centroids(2)

DEFAULT_N_RADII = 7


@dataclass(frozen=True)
class CornerProbe:
    """Probe point with strictly decreasing averaging radii."""

    vertex: tuple
    radii: tuple

    def __init__(self, vertex, radii=None, rho0: float | None = None):
        if radii is None:
            if rho0 is None:
                raise ValueError("give either radii or rho0")
            radii = dyadic_radii(rho0)
        r = np.asarray(radii, float)
        if r.ndim != 1 or len(r) == 0 or np.any(r <= 0) or np.any(np.diff(r) >= 0):
            raise ValueError("radii must be positive and strictly decreasing")
        object.__setattr__(self, "vertex", (float(vertex[0]), float(vertex[1])))
        object.__setattr__(self, "radii", tuple(r.tolist()))

    @classmethod
    def at_corner(cls, polygon: Polygon, index: int, rho0: float | None = None,
                  n: int = DEFAULT_N_RADII) -> "CornerProbe":
        """Dyadic probe at a polygon corner, validated against non-adjacent edges."""
        v = polygon.points[index]
        m = len(polygon)
        limit = float(polygon.distance_to_boundary(v[None], skip=(index, (index - 1) % m))[0])
        if rho0 is None:
            rho0 = 0.5 * limit
        if rho0 >= limit:
            raise ValueError(f"rho0={rho0} reaches a non-adjacent boundary feature (limit {limit:.4g})")
        return cls(v, dyadic_radii(rho0, n))


def dyadic_radii(rho0: float, n: int = DEFAULT_N_RADII) -> tuple:
    return tuple(rho0 * 2.0 ** -np.arange(n))


class BallAverage(NamedTuple):
    rho: float
    value: complex | float
    resolved: bool


def _ball_integrals(mesh: TriMesh, field: np.ndarray, center: np.ndarray, rho: float,
                    transform: Callable[[np.ndarray], np.ndarray]):
    p, t = mesh.nodes, mesh.triangles
    corners = p[t]  # (T, 3, 2)
    dist_v = np.linalg.norm(corners - center, axis=2)
    inside = np.all(dist_v <= rho, axis=1)
    # distance from center to each triangle (0 when center is inside)
    lo = _point_triangle_distance(center, corners)
    touched = (~inside) & (lo < rho)
    area = mesh.areas()
    f = field[t]
    total = 0.0
    meas = 0.0
    if np.any(inside):
        vals = transform(f[inside] @ _INNER.T)  # (Ti, 16)
        total = total + np.sum(vals.mean(axis=1) * area[inside])
        meas += float(np.sum(area[inside]))
    if np.any(touched):
        cs = corners[touched]
        pts = np.einsum("lk,tkd->tld", _LEAVES, cs)
        mask = np.linalg.norm(pts - center, axis=2) < rho
        vals = transform(f[touched] @ _LEAVES.T)
        w = area[touched][:, None] / len(_LEAVES)
        total = total + np.sum(np.where(mask, vals, 0.0) * w)
        meas += float(np.sum(mask * w))
    return total, meas


def _point_triangle_distance(c: np.ndarray, tri: np.ndarray) -> np.ndarray:
    a, b, d = tri[:, 0], tri[:, 1], tri[:, 2]

    def seg(p, q):
        pq = q - p
        tt = np.clip(np.einsum("ij,ij->i", c - p, pq) / np.einsum("ij,ij->i", pq, pq), 0, 1)
        return np.linalg.norm(c - (p + tt[:, None] * pq), axis=1)

    dist = np.minimum(np.minimum(seg(a, b), seg(b, d)), seg(d, a))

    def cross(u, v):
        return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]

    s1 = cross(b - a, c - a)
    s2 = cross(d - b, c - b)
    s3 = cross(a - d, c - d)
    inside = ((s1 >= 0) & (s2 >= 0) & (s3 >= 0)) | ((s1 <= 0) & (s2 <= 0) & (s3 <= 0))
    return np.where(inside, 0.0, dist)


def local_mesh_size(mesh: TriMesh, center, rho: float) -> float:
    """Largest diameter among triangles meeting the ball ``B(center, rho)``."""
    c = np.asarray(center, float)
    d = _point_triangle_distance(c, mesh.nodes[mesh.triangles])
    sel = d < rho
    if not np.any(sel):
        sel = d <= d.min()
    return float(mesh.triangle_diameters()[sel].max())


def ball_average(mesh: TriMesh, field: np.ndarray, center, rho: float, *, absolute: bool = True):
    """Mean of ``|field|`` (or of ``field``) over ``B(center, rho)`` intersected with the mesh."""
    field = np.asarray(field)
    c = np.asarray(center, float)
    transform = np.abs if absolute else (lambda z: z)
    total, meas = _ball_integrals(mesh, field, c, rho, transform)
    if meas <= 0:
        raise ValueError(f"ball of radius {rho} around {tuple(c)} misses the mesh")
    return total / meas


def shrinking_ball_average(field: np.ndarray, mesh: TriMesh, probe: CornerProbe, *,
                           absolute: bool = True, min_elements: float = 3.0) -> list[BallAverage]:
    """Averages of ``|field|`` over ``B(vertex, rho) ∩ Ω`` for each probe radius.

    Triangles cut by the circle are subdivided to depth 4 and integrated by
    leaf centroids.  Radii spanning fewer than ``min_elements`` elements
    across the ball diameter are returned with ``resolved=False``.
    """
    field = np.asarray(field)
    if field.shape[0] != mesh.n_nodes:
        raise ValueError("field must have one value per mesh node")
    c = np.asarray(probe.vertex, float)
    extent = float(np.max(np.linalg.norm(mesh.nodes - c, axis=1)))
    out = []
    for rho in probe.radii:
        if rho > extent:
            raise ValueError(f"radius {rho} exceeds mesh extent {extent:.4g} around the probe")
        val = ball_average(mesh, field, c, rho, absolute=absolute)
        resolved = 2 * rho >= min_elements * local_mesh_size(mesh, c, rho)
        out.append(BallAverage(rho, val, bool(resolved)))
    return out
