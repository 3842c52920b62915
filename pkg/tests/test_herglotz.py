import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from cornerwave.geometry import Disk, triangulate
from cornerwave.herglotz import (FourierKernel, basis_matrix, bessel_J, bessel_sequence, embedding_ratio,
                                 eval_gradient, eval_jacobi_anger, eval_quadrature, fit_kernel, gamma_p,
                                 h1_misfit)

RNG = np.random.default_rng(7)
KERNEL = FourierKernel(2.5, RNG.normal(size=9) + 1j * RNG.normal(size=9))


def _points(n, rmax):
    r = rmax * np.sqrt(RNG.uniform(0, 1, n))
    t = RNG.uniform(-np.pi, np.pi, n)
    return np.column_stack([r * np.cos(t), r * np.sin(t)])


def test_bessel_sequence_matches_scipy():
    t = np.concatenate([[0.0, 1e-8], np.linspace(0.01, 60, 400)])
    J = bessel_sequence(50, t)
    ref = special.jv(np.arange(51)[:, None], t[None, :])
    assert np.max(np.abs(J - ref)) < 1e-14


@given(st.integers(0, 30), st.floats(0.0, 40.0))
def test_bessel_J_pointwise(p, t):
    assert abs(bessel_J(p, t) - special.jv(p, t)) < 1e-14


def test_constant_kernel_is_2pi_j0():
    k = 3.0
    pts = _points(50, 2.0)
    v = eval_quadrature(FourierKernel.constant(k), pts)
    assert np.max(np.abs(v - 2 * np.pi * special.j0(k * np.hypot(*pts.T)))) < 1e-12


def test_single_mode_closed_form():
    k, p = 2.0, 3
    pts = _points(30, 1.5)
    r, th = np.hypot(*pts.T), np.arctan2(pts[:, 1], pts[:, 0])
    v = eval_quadrature(FourierKernel.single_mode(k, p), pts)
    ref = 2 * np.pi * 1j ** p * special.jv(p, k * r) * np.exp(1j * p * th)
    assert np.max(np.abs(v - ref)) < 1e-12


def test_jacobi_anger_matches_quadrature():
    # k|x| <= 5 with 40 terms
    pts = _points(200, 5.0 / KERNEL.k)
    a = eval_jacobi_anger(KERNEL, pts, 40)
    b = eval_quadrature(KERNEL, pts)
    assert np.max(np.abs(a - b)) < 1e-10


def test_basis_matrix_matches_quadrature():
    pts = _points(60, 1.0)
    assert np.max(np.abs(basis_matrix(KERNEL.k, KERNEL.P, pts) @ KERNEL.coeffs - eval_quadrature(KERNEL, pts))) < 1e-12


def test_gamma_moment_against_trapezoid():
    n = 512
    phi = 2 * np.pi * np.arange(n) / n
    g = KERNEL.eval_kernel(phi)
    for p in (1, 2, 5):
        for d in (0.0, 0.8):
            ref = np.sum(g * np.cos(p * (phi - d))) * 2 * np.pi / n
            assert abs(gamma_p(KERNEL, p, d) - ref) < 1e-12
    with pytest.raises(ValueError):
        gamma_p(KERNEL, 0)


def test_herglotz_solves_helmholtz():
    x = np.array([[0.3, -0.4]])
    e = 1e-3
    lap = sum(eval_quadrature(KERNEL, x + e * d) + eval_quadrature(KERNEL, x - e * d) for d in np.eye(2)) \
        - 4 * eval_quadrature(KERNEL, x)
    assert abs(lap[0] / e ** 2 + KERNEL.k ** 2 * eval_quadrature(KERNEL, x)[0]) < 1e-4 * abs(KERNEL.k ** 2)


def test_gradient_by_finite_differences():
    x = np.array([0.2, 0.1])
    e = 1e-6
    fd = [(eval_quadrature(KERNEL, x + e * d) - eval_quadrature(KERNEL, x - e * d)) / (2 * e) for d in np.eye(2)]
    assert np.allclose(eval_gradient(KERNEL, x), fd, rtol=1e-7)


@settings(max_examples=25)
@given(st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False), min_size=1,
                max_size=7).filter(lambda c: len(c) % 2 == 1 and any(abs(z) > 1e-3 for z in c)),
       st.floats(0.1, 5.0))
def test_embedding_ratio_at_most_one(coeffs, k):
    kern = FourierKernel(k, coeffs)
    assert embedding_ratio(kern, _points(20, 2.0)) <= 1 + 1e-12


def test_json_roundtrip(tmp_path):
    KERNEL.save(tmp_path / "k.json")
    back = FourierKernel.load(tmp_path / "k.json")
    assert back.k == KERNEL.k and np.array_equal(back.coeffs, KERNEL.coeffs)


def test_kernel_validation():
    with pytest.raises(ValueError):
        FourierKernel(1.0, [1.0, 2.0])
    with pytest.raises(ValueError):
        FourierKernel(-1.0, [1.0])


def test_fit_recovers_planted_kernel():
    mesh = triangulate(Disk(1.0), 0.1)
    planted = FourierKernel(2.0, RNG.normal(size=9) + 1j * RNG.normal(size=9))
    target = eval_quadrature(planted, mesh.nodes)
    kern, rep = fit_kernel(target, mesh, 2.0, 4, reg_lambda=0.0)
    assert np.max(np.abs(kern.coeffs - planted.coeffs)) < 1e-8
    assert rep.residual_h1 < 1e-8


def test_fit_plane_wave_residual_decreases_with_P():
    mesh = triangulate(Disk(0.5), 0.05)
    target = np.exp(1j * 2.0 * mesh.nodes @ np.array([math.cos(0.4), math.sin(0.4)]))
    res = [fit_kernel(target, mesh, 2.0, P)[1].residual_h1 for P in (2, 4, 8)]
    assert res[0] > res[1] > res[2]
    assert h1_misfit(target, target, mesh) == 0.0


def test_fit_singular_without_regularization():
    mesh = triangulate(Disk(0.2), 0.05)
    with pytest.raises(np.linalg.LinAlgError):
        fit_kernel(np.ones(mesh.n_nodes), mesh, 1.0, 25, reg_lambda=0.0)
