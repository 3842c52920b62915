import math

import numpy as np
import pytest
import scipy.linalg as sla
from scipy import special
from scipy.optimize import brentq

from cornerwave.geometry import CornerProbe, Disk, Polygon, Sector, corner_grading, triangulate
from cornerwave.teig import (AnalyticField, ConductiveMedium, CornerFields, DiskModeProblem, QPiece, SearchWindow,
                             assemble, corner_vanishing_profile, disk_determinant, disk_spectrum, eigenpair_near,
                             flat_point, green_identity, interior_indicator, master_identity_residual,
                             pair_residuals, save_pair, solve_dense_qz)

SQUARE = Polygon([(0, 0), (1, 0), (1, 1), (0, 1)])


def test_medium_json_roundtrip():
    med = ConductiveMedium(SQUARE, 2.0, {0: 1.0, 1: 0.5j, 2: 0.0, 3: 2.0},
                           (QPiece(Polygon([(0.2, 0.2), (0.4, 0.2), (0.4, 0.4)]), 3.0),))
    back = ConductiveMedium.from_json(med.to_json())
    assert back.to_dict() == med.to_dict()
    assert back.q_at(np.array([[0.35, 0.25], [0.9, 0.9]])).tolist() == [3.0, 2.0]
    disk = ConductiveMedium(Disk(2.0), complex(4.0, 0.1), 0.5)
    assert ConductiveMedium.from_json(disk.to_json()).to_dict() == disk.to_dict()


def test_medium_validation():
    with pytest.raises(ValueError):
        ConductiveMedium(SQUARE, 0.0)
    mesh = triangulate(SQUARE, 0.3)
    with pytest.raises(ValueError, match="unknown"):
        assemble(ConductiveMedium(SQUARE, 2.0, {0: 1, 1: 1, 2: 1, 3: 1, 7: 1}), mesh)
    with pytest.raises(ValueError, match="no eta"):
        assemble(ConductiveMedium(SQUARE, 2.0, {0: 1, 1: 1}), mesh)


def test_real_medium_gives_real_pencil():
    mesh = triangulate(SQUARE, 0.3)
    A, B = assemble(ConductiveMedium(SQUARE, 2.0, 1.0), mesh)
    assert not np.iscomplexobj(A.data) and not np.iscomplexobj(B.data)
    A, B = assemble(ConductiveMedium(SQUARE, 2.0, 1.0j), mesh)
    assert np.iscomplexobj(A.data)


def test_zero_eta_has_harmonic_null_space():
    # for eta = 0, any harmonic extension pair v = w solves the pencil with k = 0
    mesh = triangulate(SQUARE, 0.3)
    pen = assemble(ConductiveMedium(SQUARE, 2.0, 0.0), mesh)
    A, B = pen.A.toarray(), pen.B.toarray()
    assert A.shape[0] - np.linalg.matrix_rank(A) == len(pen.boundary)


def _det_ref(n, q, eta, k):
    k1 = k * math.sqrt(q)
    return (special.jv(n, k1) * (k * special.jvp(n, k) + eta * special.jv(n, k))
            - k1 * special.jvp(n, k1) * special.jv(n, k))


def test_disk_spectrum_roots_are_roots():
    spec = disk_spectrum(1.0, 4.0, 0.5, (0.5, 6.0), n_max=6)
    assert spec
    for k, n in spec:
        assert abs(_det_ref(n, 4.0, 0.5, k)) < 1e-10
    k0 = brentq(lambda k: _det_ref(1, 4.0, 0.0, k), 2.8, 3.0)
    spec0 = disk_spectrum(1.0, 4.0, 0.0, (0.5, 6.0), n_max=6)
    assert abs(spec0[0][0] - k0) < 1e-12 and spec0[0][1] == 1


def test_disk_determinant_validation():
    with pytest.raises(ValueError):
        disk_determinant(DiskModeProblem(1.0, 4.0, 0.0, 0), 0.0)
    with pytest.raises(ValueError):
        DiskModeProblem(-1.0, 4.0, 0.0, 0)


@pytest.fixture(scope="module")
def disk_pairs():
    med = ConductiveMedium(Disk(1.0), 4.0, 0.0)
    mesh = triangulate(Disk(1.0), 0.3)
    return assemble(med, mesh), solve_dense_qz(assemble(med, mesh), SearchWindow(0.5, 6.0))


def test_qz_pairs_have_small_residuals(disk_pairs):
    pen, pairs = disk_pairs
    assert pairs
    assert all(p.max_residual < 1e-6 for p in pairs)
    assert all(0.5 < p.k.real <= 6.0 and abs(p.k.imag) < 1e-8 for p in pairs)
    assert [p.k.real for p in pairs] == sorted(p.k.real for p in pairs)
    # coarse mesh: within 15% of the separation-of-variables value
    assert abs(pairs[0].k.real - 2.902610) / 2.902610 < 0.15


def test_residuals_detect_a_wrong_eigenvalue(disk_pairs):
    pen, pairs = disk_pairs
    p = pairs[0]
    x = pen.join(p.v, p.w)
    assert max(pair_residuals(pen, p.k * 1.01, x)) > 1e-3


def test_eigenpair_near_refines_guess(disk_pairs):
    pen, pairs = disk_pairs
    p = eigenpair_near(pen, pairs[0].k * 1.001)
    assert abs(p.k - pairs[0].k) < 1e-9


def test_qz_budget():
    mesh = triangulate(SQUARE, 0.3)
    with pytest.raises(ValueError, match="budget"):
        solve_dense_qz(assemble(ConductiveMedium(SQUARE, 2.0, 1.0), mesh), budget=10)


def test_save_pair(disk_pairs, tmp_path):
    paths = save_pair(disk_pairs[1][0], tmp_path)
    assert all(p.exists() for p in paths)


def _field(fn, grad, lap):
    return AnalyticField(fn, grad, lap)


def _exp_sin():
    f = lambda x: np.exp(x[:, 0]) * np.sin(2 * x[:, 1])
    g = lambda x: np.column_stack([np.exp(x[:, 0]) * np.sin(2 * x[:, 1]), 2 * np.exp(x[:, 0]) * np.cos(2 * x[:, 1])])
    return _field(f, g, lambda x: -3 * f(x))


def _quad_poly():
    f = lambda x: x[:, 0] ** 2 * x[:, 1] + 1j * x[:, 1] ** 3
    g = lambda x: np.column_stack([2 * x[:, 0] * x[:, 1], x[:, 0] ** 2 + 3j * x[:, 1] ** 2])
    return _field(f, g, lambda x: 2 * x[:, 1] + 6j * x[:, 1])


@pytest.mark.parametrize("domain", [SQUARE, Polygon([(0, 0), (2, 0.5), (1, 2), (-0.5, 1)]),
                                    Sector(-math.pi / 3, math.pi / 2, 0.7)])
def test_green_identity(domain):
    res = green_identity(_exp_sin(), _quad_poly(), domain)
    assert res.residual < 1e-8
    assert abs(res.lhs) > 1e-3


def _manufactured(b=0.7, c=1.3, eta=0.8, h=0.4):
    # d = v - w = x1 x2 (c + b r^2) vanishes on both rays of the quarter sector,
    # and dv/dnu of d equals -eta v there
    sec = Sector(0.0, math.pi / 2, h)
    d = lambda x: x[:, 0] * x[:, 1] * (c + b * (x[:, 0] ** 2 + x[:, 1] ** 2))
    gd = lambda x: np.column_stack([
        x[:, 1] * (c + b * (3 * x[:, 0] ** 2 + x[:, 1] ** 2)),
        x[:, 0] * (c + b * (x[:, 0] ** 2 + 3 * x[:, 1] ** 2))])
    v = lambda x: (c * (x[:, 0] + x[:, 1]) + b * (x[:, 0] ** 3 + x[:, 1] ** 3)) / eta
    fd = lambda x: 12 * b * x[:, 0] * x[:, 1]
    return CornerFields(sec, v, d, gd, fd, eta, eta)


def test_master_identity_on_manufactured_data():
    terms = master_identity_residual(_manufactured(), [1.0, 10.0, 100.0, 1e3])
    assert all(t.residual < 1e-8 for t in terms)
    assert all(abs(t.rays) > 0 for t in terms)


def test_master_identity_detects_wrong_eta():
    f = _manufactured()
    bad = CornerFields(f.sector, f.v, f.d, f.grad_d, f.f_diff, 2 * f.eta_minus, f.eta_plus)
    assert master_identity_residual(bad, [10.0])[0].residual > 1e-3


@pytest.fixture(scope="module")
def square_pair():
    med = ConductiveMedium(SQUARE, 2.0, 1.0)
    mesh = triangulate(SQUARE, 0.1, size_fn=corner_grading([(0, 0)], 0.01, 0.2))
    pairs = solve_dense_qz(assemble(med, mesh), SearchWindow(10.0, 16.0))
    assert pairs
    return pairs[0]


def test_corner_profile_and_control(square_pair):
    probe = CornerProbe.at_corner(SQUARE, 0, 0.2, 4)
    prof = corner_vanishing_profile(square_pair, probe, CornerProbe(flat_point(square_pair), rho0=0.2))
    assert prof.ratio("corner") < prof.ratio("control")
    rows = prof.to_rows()
    assert len(rows) == 4 + len(prof.control)


def test_corner_profile_rejects_non_corner(square_pair):
    with pytest.raises(ValueError):
        corner_vanishing_profile(square_pair, CornerProbe((0.5, 0.0), rho0=0.1))


def test_interior_indicator_needs_zero_eta(square_pair):
    with pytest.raises(ValueError, match="eta = 0"):
        interior_indicator(square_pair, CornerProbe((0, 0), rho0=0.1), 1.0)


def test_flat_point_is_away_from_corners(square_pair):
    p = np.array(flat_point(square_pair))
    assert np.min(np.linalg.norm(SQUARE.points - p, axis=1)) >= 0.25
