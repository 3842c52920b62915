import math
import warnings

import numpy as np
import pytest
from scipy.special import h1vp, hankel1, jv, jvp

from cornerwave.geometry import Disk, Polygon, refine_uniform, triangulate
from cornerwave.inverse import farfield_distance
from cornerwave.scatter import (AliasingWarning, DtnRing, FarField, IncidentWave, disk_mode_coefficients,
                                disk_series_forward, eta_from_physics, far_field_from_ring, nonvanishing_check,
                                probe_grid, scattering_mesh, scattering_projector, solve_forward)
from cornerwave.teig import ConductiveMedium

DISK = ConductiveMedium(Disk(1.0), 2.0, 0.5j)


def _rel(F, G):
    return farfield_distance(F, G) / math.sqrt(2 * math.pi / len(G.samples) * np.sum(np.abs(G.samples) ** 2))


def test_incident_modes_match_fft():
    inc = IncidentWave.from_angle(2.0, 0.6, amplitude=1.5, origin=(0.2, -0.1))
    m, R = 128, 1.3
    th = 2 * np.pi * np.arange(m) / m
    x = R * np.column_stack([np.cos(th), np.sin(th)])
    n = np.arange(-10, 11)
    c = np.fft.fft(inc.value(x))[np.mod(n, m)] / m
    dr = np.sum(inc.grad(x) * x / R, axis=1)
    cd = np.fft.fft(dr)[np.mod(n, m)] / m
    t, d = inc.modes(R, n)
    assert np.max(np.abs(t - c)) < 1e-13 and np.max(np.abs(d - cd)) < 1e-12


def test_incident_validation():
    with pytest.raises(ValueError):
        IncidentWave(0.0)
    with pytest.raises(ValueError):
        IncidentWave(1.0, (1.0, 1.0))


def test_dtn_symbol_is_outgoing_log_derivative():
    ring = DtnRing.for_wavenumber(2.0, 1.5)
    assert ring.N == 3 + 12
    n = ring.orders
    assert np.allclose(ring.symbol(2.0), 2.0 * h1vp(n, 3.0) / hankel1(n, 3.0))


def test_farfield_modes_csv_roundtrip():
    n = np.arange(-3, 4)
    F = FarField.from_modes(1.5, n, np.arange(7) + 1j, 32)
    orders, c = F.coefficients()
    assert np.allclose(c[np.isin(orders, n)], np.arange(7) + 1j)
    G = FarField.from_csv(F.to_csv())
    assert G.k == F.k and np.array_equal(G.samples, F.samples)
    assert np.allclose(F.resample(64).resample(32).samples, F.samples)
    with pytest.raises(ValueError):
        FarField(1.0, np.ones(30))


def test_series_satisfies_transmission_conditions():
    k, R, q, eta = 1.7, 1.0, 3.0, 0.4 + 0.3j
    n = np.arange(-25, 26)
    a, b = disk_mode_coefficients(k, R, q, eta, n)
    k1 = k * math.sqrt(q)
    inner, inner_r = a * jv(n, k1 * R), a * k1 * jvp(n, k1 * R)
    outer = (1j ** n) * jv(n, k * R) + b * hankel1(n, k * R)
    outer_r = (1j ** n) * k * jvp(n, k * R) + b * k * h1vp(n, k * R)
    assert np.max(np.abs(inner - outer)) < 1e-13
    assert np.max(np.abs(inner_r - (outer_r + eta * outer))) < 1e-12


def test_no_contrast_no_scattering_in_series():
    ser = disk_series_forward(ConductiveMedium(Disk(1.0), 1.0, 0.0), IncidentWave(2.0))
    assert np.max(np.abs(ser.b)) < 1e-14


def test_series_reciprocity():
    m = 32
    ang = 2 * np.pi * np.arange(m) / m
    tab = np.array([disk_series_forward(DISK, IncidentWave.from_angle(1.0, a), n_samples=m).far_field.samples
                    for a in ang])
    flip = (np.arange(m) + m // 2) % m
    # u_inf(x_hat; d) = u_inf(-d; -x_hat)
    assert np.max(np.abs(tab - tab[flip][:, flip].T)) < 1e-12


def test_ring_radius_independence_of_exact_trace():
    inc = IncidentWave.from_angle(1.0, 0.7)
    ser = disk_series_forward(DISK, inc, n_samples=64)
    for R in (2.0, 3.0):
        ring = DtnRing.for_wavenumber(1.0, R)
        th = 2 * np.pi * np.arange(128) / 128
        trace = ser.scattered(R * np.column_stack([np.cos(th), np.sin(th)]), 1.0)
        assert _rel(far_field_from_ring(trace, ring, 1.0, n_samples=64), ser.far_field) < 1e-12


def test_far_field_from_ring_guards():
    ring = DtnRing(2.0, 10)
    with pytest.raises(ValueError):
        far_field_from_ring(np.ones(20), ring, 1.0)
    th = 2 * np.pi * np.arange(64) / 64
    with pytest.warns(AliasingWarning):
        far_field_from_ring(np.exp(30j * th), ring, 1.0)


@pytest.fixture(scope="module")
def disk_levels():
    inc = IncidentWave(1.0)
    mesh = scattering_mesh(DISK, 2.0, 0.2)
    proj = scattering_projector(DISK, 2.0)
    out = []
    for _ in range(3):
        out.append(solve_forward(DISK, inc, mesh))
        mesh = refine_uniform(mesh, proj)
    return inc, out


def test_fem_matches_series_with_second_order(disk_levels):
    inc, sols = disk_levels
    ref = disk_series_forward(DISK, inc, n_samples=64).far_field
    errs = [_rel(s.far_field(64), ref) for s in sols]
    assert errs[1] < 1e-2
    assert all(math.log2(a / b) > 1.8 for a, b in zip(errs, errs[1:]))


def test_absorbing_coating_draws_flux(disk_levels):
    # Im(eta) > 0 absorbs energy; for real eta the net flux vanishes in the limit
    _, sols = disk_levels
    assert sols[-1].ring_flux().imag < 0
    med = ConductiveMedium(Disk(1.0), 2.0, 0.5)
    mesh = scattering_mesh(med, 2.0, 0.2)
    leak = []
    for _ in range(3):
        leak.append(abs(solve_forward(med, IncidentWave(1.0), mesh).ring_flux().imag))
        mesh = refine_uniform(mesh, scattering_projector(med, 2.0))
    assert leak[-1] < 2e-3
    assert all(a / b > 3.5 for a, b in zip(leak, leak[1:]))


def test_no_scatterer_error_decreases_at_second_order():
    med = ConductiveMedium(Disk(1.0), 1.0, 0.0)
    mesh = scattering_mesh(med, 2.0, 0.2)
    proj = scattering_projector(med, 2.0)
    sizes = []
    for _ in range(3):
        sizes.append(np.max(np.abs(solve_forward(med, IncidentWave(1.0), mesh).scattered)))
        mesh = refine_uniform(mesh, proj)
    assert sizes[-1] < 1e-3
    assert all(a / b > 3.0 for a, b in zip(sizes, sizes[1:]))


def test_forward_is_linear_in_amplitude():
    med = ConductiveMedium(Polygon([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)]), 2.0, 0.5)
    mesh = scattering_mesh(med, 1.2, 0.15)
    F1 = solve_forward(med, IncidentWave(2.0), mesh).far_field(64)
    F2 = solve_forward(med, IncidentWave(2.0, amplitude=2 - 1j), mesh).far_field(64)
    assert np.max(np.abs(F2.samples - (2 - 1j) * F1.samples)) < 1e-12


def test_nonvanishing_check():
    mesh = triangulate(Polygon([(0, 0), (1, 0), (1, 1), (0, 1)]), 0.1)
    pts = probe_grid(Polygon([(0, 0), (1, 0), (1, 1), (0, 1)]), 0.25)
    assert nonvanishing_check(np.ones(mesh.n_nodes), mesh, pts).admissible
    u = np.hypot(mesh.nodes[:, 0] - 0.5, mesh.nodes[:, 1] - 0.5)
    rep = nonvanishing_check(u, mesh, pts, rho=0.02, threshold=0.05)
    assert not rep.admissible and rep.argmin == (0.5, 0.5)


def test_eta_from_physics():
    k, eta = eta_from_physics(2.0, 0.5, 1.0, 4.0)
    assert k == pytest.approx(4.0) and eta == pytest.approx(1j)
    with pytest.raises(ValueError):
        eta_from_physics(1.0, -1.0, 1.0, 1.0)


def test_under_resolved_ring_is_rejected():
    med = ConductiveMedium(Disk(0.5), 2.0, 0.0)
    with pytest.raises(ValueError, match="ring nodes"):
        solve_forward(med, IncidentWave(12.0), scattering_mesh(med, 1.0, 0.4))
