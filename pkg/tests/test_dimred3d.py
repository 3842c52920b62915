import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import spherical_jn

from cornerwave.dimred3d import (BumpFunction, CylinderField, c1_psi, c1_psi_bound, c1_psi_bound_check,
                                 c1_psi_direct, c1_psi_proof_bound, c311_bracket, c311_check, c311_limit,
                                 c311_ratio, c_psi, holder_quotient, psi_transform, reduce, reduce_weighted,
                                 reduction_pde_residual, reduction_source, reports_json, spherical_bessel_j,
                                 spherical_bessel_series, weighted_mu_sum_check)

# ∫_{-1}^{1} exp(-1/(1-t²)) dt, computed independently with scipy quad
BUMP_MASS = 0.44399381616807943
PTS = np.array([[0.0, 0.0], [0.1, -0.2], [0.3, 0.25], [-0.4, 0.05]])


def test_bump_mass_and_sup():
    oracle = quad(lambda t: math.exp(-1 / (1 - t * t)), -1, 1, epsabs=1e-15, epsrel=1e-14)[0]
    assert oracle == pytest.approx(BUMP_MASS, rel=1e-13)
    psi = BumpFunction(0.3, scale=2.0)
    assert c_psi(psi) == pytest.approx(2.0 * 0.3 * BUMP_MASS, rel=1e-11)
    assert psi.sup_norm == pytest.approx(float(psi(0.0)))
    assert np.all(psi(np.array([-0.3, 0.3, 0.5])) == 0)
    with pytest.raises(ValueError):
        BumpFunction(0.0)


def test_bump_derivatives_match_finite_differences():
    psi = BumpFunction(0.4, center=0.1)
    x = np.linspace(-0.25, 0.45, 15)
    e = 1e-5
    assert np.max(np.abs(psi.d1(x) - (psi(x + e) - psi(x - e)) / (2 * e))) < 1e-7
    e = 1e-4
    assert np.max(np.abs(psi.d2(x) - (psi(x + e) - 2 * psi(x) + psi(x - e)) / e ** 2)) < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.9), st.floats(-0.5, 0.5), st.floats(0.1, 5.0))
def test_bump_is_positive_and_even_about_center(L, c, scale):
    psi = BumpFunction(L, center=c, scale=scale)
    t = np.linspace(-0.99, 0.99, 41) * L
    v = psi(c + t)
    assert np.all(v > 0) and np.all(v <= psi.sup_norm * (1 + 1e-15))
    assert np.allclose(v, v[::-1], rtol=1e-9, atol=0)


def test_plane_wave_reduction_factorizes():
    k, beta, L = 3.0, 1.7, 0.3
    psi = BumpFunction(L)
    v = CylinderField.plane_wave(k, 0.4, beta)
    hat = quad(lambda x: float(psi(x)) * math.cos(beta * x), -L, L, epsabs=1e-15)[0]
    assert psi_transform(psi, beta) == pytest.approx(hat, rel=1e-10)
    kp = math.sqrt(k * k - beta * beta)
    d = np.array([math.cos(0.4), math.sin(0.4)])
    assert np.allclose(reduce(v, psi, PTS), hat * np.exp(1j * kp * PTS @ d), rtol=1e-10, atol=0)


def test_odd_field_reduces_to_zero():
    f = CylinderField.from_function(lambda xp, x3: np.sin(2 * x3)[:, None] * np.cos(np.atleast_2d(xp)[:, 0])[None, :],
                                    2.0)
    assert np.max(np.abs(reduce(f, BumpFunction(0.5), PTS))) < 1e-14


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_reduction_is_linear(a, b, beta1, beta2):
    psi = BumpFunction(0.4)
    u, w = CylinderField.plane_wave(2.0, 0.1, beta1), CylinderField.bessel_cos(2.0, beta2)
    mix = CylinderField.from_function(lambda xp, x3: a * u.value(xp, x3) + b * w.value(xp, x3), 2.0)
    lhs = reduce(mix, psi, PTS)
    rhs = a * reduce(u, psi, PTS) + b * reduce(w, psi, PTS)
    assert np.max(np.abs(lhs - rhs)) < 1e-10 * (1 + abs(a) + abs(b))


def test_support_must_fit_inside_cylinder():
    with pytest.raises(ValueError):
        reduce(CylinderField.zero(1.0, M=0.2), BumpFunction(0.3), PTS)


@pytest.mark.parametrize("field", [CylinderField.plane_wave(2.5, 1.0, 1.2), CylinderField.bessel_cos(2.5, 0.8),
                                   CylinderField.plane_wave(4.0, -0.7, 3.5), CylinderField.zero(1.0)])
def test_reduced_field_solves_2d_equation(field):
    assert reduction_pde_residual(field, BumpFunction(0.35), PTS) < 1e-8


def test_opposite_sign_source_leaves_a_residual():
    # with +∫ψ''v the mismatch is 2 |∫ψ''v| = 2 β² |R(v)|
    beta, psi = 1.5, BumpFunction(0.35)
    v = CylinderField.plane_wave(2.5, 0.3, beta)
    R = reduce(v, psi, PTS)
    flipped = reduce_weighted(v, psi.d2, psi, PTS) - v.k ** 2 * R
    resid = np.abs(-v.kp ** 2 * R - flipped)
    assert np.allclose(resid, 2 * beta ** 2 * np.abs(R), rtol=1e-8)
    assert np.max(np.abs(reduction_source(v, psi, PTS) - (-v.kp ** 2 * R))) < 1e-8


def test_holder_quotient():
    x = np.linspace(0, 1, 11)[:, None]
    assert holder_quotient(np.sqrt(x[:, 0]), x, 0.5) == pytest.approx(1.0)
    assert holder_quotient(np.ones(11), x, 0.5) == 0.0


@pytest.mark.parametrize("l", range(6))
def test_spherical_bessel_matches_scipy(l):
    t = np.concatenate([np.linspace(0, 2, 41), np.linspace(2, 30, 57)])
    assert np.max(np.abs(spherical_bessel_j(l, t) - spherical_jn(l, t))) < 1e-14


def test_spherical_bessel_frozen_values():
    assert spherical_bessel_j(0, 0.0) == 1.0
    assert spherical_bessel_j(1, 1.0) == pytest.approx(0.30116867893975674, rel=1e-15)
    # the alternating series starts 1 - t²/6 for j0
    assert spherical_bessel_series(0, 0.1) == pytest.approx(math.sin(0.1) / 0.1, rel=1e-15)
    with pytest.raises(ValueError):
        spherical_bessel_j(-1, 1.0)


@pytest.mark.parametrize("l", [1, 3, 5])
def test_spherical_bessel_small_argument(l):
    df = math.prod(range(1, 2 * l + 2, 2))
    for t in (1e-2, 1e-3):
        assert spherical_bessel_j(l, t) / (t ** l / df) == pytest.approx(1 - t * t / (2 * (2 * l + 3)), rel=1e-10)


@pytest.mark.parametrize("rho", [0.15, 0.3, 1.0, 4.0])
def test_c1_dual_route(rho):
    psi = BumpFunction(0.1)
    assert c1_psi(psi, rho) == pytest.approx(c1_psi_direct(psi, rho), rel=1e-10)


def test_c1_frozen_value():
    assert c1_psi(BumpFunction(0.1), 0.3) == pytest.approx(0.149286148309692, rel=1e-12)


def test_c1_tends_to_mass_over_distance():
    psi = BumpFunction(0.1)
    errs = [abs(r * c1_psi(psi, r) / c_psi(psi) - 1) for r in (1.0, 2.0, 4.0)]
    assert all(math.log2(a / b) > 1.9 for a, b in zip(errs, errs[1:]))


def test_c1_literal_bound_fails_close_to_the_bump():
    psi = BumpFunction(0.1)
    rep = c1_psi_bound_check(psi, [0.05, 0.2, 0.5, 1.0])
    assert rep[0].passed and "skipped" in rep[0].note
    assert not rep[1].passed and rep[1].value == pytest.approx(0.2263, abs=1e-4)
    assert rep[2].passed and rep[3].passed
    assert c1_psi_bound(psi) == pytest.approx(0.2074, abs=1e-4)


def test_c1_distance_dependent_bound_holds():
    psi = BumpFunction(0.1)
    rhos = np.geomspace(0.101, 10, 25)
    assert all(r.passed for r in c1_psi_bound_check(psi, rhos, proof_form=True))
    assert c1_psi_proof_bound(psi, 0.2) > c1_psi_bound(psi)


def test_c311_bracket_and_limit():
    psi = BumpFunction(0.2)
    lo, hi = c311_bracket(psi, 1.0)
    assert lo == pytest.approx(0.0851, abs=1e-4) and hi == pytest.approx(0.0925, abs=1e-4)
    assert lo < c311_limit(psi, 1.0) < hi
    assert c311_limit(psi, 1e-4) == pytest.approx(c_psi(psi), rel=1e-8)


def test_c311_ratio_stabilizes_in_bracket():
    psi = BumpFunction(0.2)
    reps = c311_check(0.5, psi, 1.0, [1e3, 1e4], 0.5)
    assert all(r.passed for r in reps)
    assert abs(reps[1].value / reps[0].value - 1) < 0.05
    assert abs(reps[1].value - c311_limit(psi, 1.0)) < 1e-5
    assert '"pass": true' in reports_json(reps)


def test_c311_hypotheses_enforced():
    with pytest.raises(ValueError):
        c311_ratio(0.5, BumpFunction(0.2), 6.0, 100.0, 0.1)
    with pytest.raises(ValueError):
        c311_ratio(0.5, BumpFunction(0.2), 1.0, 100.0, 1.0)


def test_weighted_mu_sum_random_trials_never_vanish():
    rng = np.random.default_rng(7)
    n = 0
    while n < 10_000:
        tm, tM = np.sort(rng.uniform(-np.pi, np.pi, 2))
        if abs(tM - tm - np.pi) < 1e-6:
            continue
        cm, cp = rng.uniform(0.01, 10, 2)
        assert weighted_mu_sum_check(tm, tM, cm, cp).nonzero
        n += 1


@settings(max_examples=200, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(0.01, 3.0), st.floats(0.01, 10), st.floats(0.01, 10))
def test_weighted_mu_sum_modulus_bound(tm, gap, cm, cp):
    tM = tm + gap
    if tM >= math.pi:
        return
    z = weighted_mu_sum_check(tm, tM, cm, cp).value
    # |C⁻ e^{-iθm} + C⁺ e^{-iθM}| >= |C⁻ - C⁺| and >= (C⁻ + C⁺)|cos(gap/2)|
    assert abs(z) >= max(abs(cm - cp), (cm + cp) * abs(math.cos(gap / 2))) * (1 - 1e-12) - 1e-14


def test_weighted_mu_sum_degenerate_case():
    r = weighted_mu_sum_check(-math.pi / 2, math.pi / 2, 1.0, 1.0)
    assert abs(r.value) < 1e-15 and not r.nonzero
    with pytest.raises(ValueError):
        weighted_mu_sum_check(1.0, 0.5, 1.0, 1.0)


def test_reduction_is_linear_in_psi():
    v = CylinderField.plane_wave(2.0, 0.5, 1.1)
    a, b = BumpFunction(0.3, scale=1.5), BumpFunction(0.3, center=0.2, scale=0.5)
    both = CylinderField.from_function(v.value, 2.0)
    wsum = reduce_weighted(both, lambda x: a(x) + b(x), BumpFunction(0.5, center=0.0), PTS)
    assert np.max(np.abs(wsum - reduce(v, a, PTS) - reduce(v, b, PTS))) < 1e-10


def test_reduction_commutes_with_translation():
    # for g = f(x') h(x3), translating x' before or after reducing agrees
    f = lambda xp: np.cos(3 * xp[:, 0]) * np.exp(xp[:, 1])
    g = CylinderField.from_function(lambda xp, x3: np.cosh(x3)[:, None] * f(np.atleast_2d(xp))[None, :], 1.0)
    psi, shift = BumpFunction(0.4), np.array([0.3, -0.1])
    shifted = CylinderField.from_function(lambda xp, x3: g.value(np.atleast_2d(xp) + shift, x3), 1.0)
    assert np.allclose(reduce(shifted, psi, PTS), reduce(g, psi, PTS + shift), rtol=1e-12, atol=0)


def test_reduction_holder_quotient_is_controlled():
    alpha = 0.5
    rough = lambda xp: np.sqrt(np.abs(xp[:, 0])) + xp[:, 1]
    g = CylinderField.from_function(lambda xp, x3: (1 + x3 ** 2)[:, None] * rough(np.atleast_2d(xp))[None, :], 1.0)
    psi = BumpFunction(0.3)
    pts = np.random.default_rng(1).uniform(-0.5, 0.5, (40, 2))
    q_in = max(holder_quotient((1 + x3 ** 2) * rough(pts), pts, alpha) for x3 in np.linspace(-0.3, 0.3, 7))
    q_out = holder_quotient(reduce(g, psi, pts), pts, alpha)
    assert 0 < q_out <= q_in * c_psi(psi) * (1 + 1e-9)


def test_equal_weights_reduce_to_plain_mu_sum():
    from cornerwave.cgo import mu_sum

    for tm, tM in ((-1.0, 0.5), (-2.0, 2.5), (0.1, 3.0)):
        assert weighted_mu_sum_check(tm, tM, 0.7, 0.7).value == pytest.approx(0.7 * mu_sum(tm, tM), abs=1e-15)
