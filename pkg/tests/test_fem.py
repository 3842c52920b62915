import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from cornerwave import fem
from cornerwave.geometry import Polygon, refine_uniform, triangulate

SQUARE = Polygon([(0, 0), (1, 0), (1, 1), (0, 1)])


@pytest.fixture(scope="module")
def mesh():
    return triangulate(SQUARE, 0.1)


def test_mass_and_stiffness_basic_identities(mesh):
    M, K = fem.mass(mesh), fem.stiffness(mesh)
    one = np.ones(mesh.n_nodes)
    assert abs(one @ M @ one - 1.0) < 1e-12
    assert np.max(np.abs(K @ one)) < 1e-12
    x = mesh.nodes[:, 0]
    assert abs(x @ K @ x - 1.0) < 1e-12
    assert abs((M - M.T)).max() < 1e-15


def test_weighted_mass(mesh):
    w = np.full(mesh.n_triangles, 3.0)
    one = np.ones(mesh.n_nodes)
    assert abs(one @ fem.mass(mesh, w) @ one - 3.0) < 1e-12


def test_edge_load_integrates_boundary_function(mesh):
    b = fem.edge_load(mesh, mesh.boundary_edges, lambda p, e: np.ones(len(p)))
    assert abs(b.sum() - 4.0) < 1e-12
    Me = fem.edge_mass(mesh, mesh.boundary_edges)
    one = np.ones(mesh.n_nodes)
    assert abs(one @ Me @ one - 4.0) < 1e-12


def test_poisson_converges_at_second_order():
    # -Δu = 2π² sin(πx) sin(πy), u = 0 on the boundary
    errs = []
    m = triangulate(SQUARE, 0.2)
    for _ in range(3):
        K, M = fem.stiffness(m), fem.mass(m)
        x, y = m.nodes.T
        exact = np.sin(math.pi * x) * np.sin(math.pi * y)
        I = m.interior_nodes()
        rhs = (M @ (2 * math.pi ** 2 * exact))[I]
        u = np.zeros(m.n_nodes)
        u[I] = spla.spsolve(K[I][:, I].tocsc(), rhs)
        errs.append(fem.l2_norm(m, u - exact))
        m = refine_uniform(m)
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


def test_gradients_exact_for_linear_fields(mesh):
    f = 2 * mesh.nodes[:, 0] - 3 * mesh.nodes[:, 1]
    g = fem.gradients(mesh, f)
    assert np.allclose(g, [2, -3])
    assert fem.h1_seminorm(mesh, f) == pytest.approx(math.sqrt(13))


def test_point_locator_interpolates_linear_field(mesh):
    f = 1 + mesh.nodes[:, 0] + 2 * mesh.nodes[:, 1]
    pts = np.random.default_rng(1).uniform(0, 1, (50, 2))
    vals = fem.PointLocator(mesh).interpolate(f, pts)
    assert np.allclose(vals, 1 + pts[:, 0] + 2 * pts[:, 1])
