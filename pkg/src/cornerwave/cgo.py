"""The planar CGO solution ``u0(sx) = exp(-sqrt(s z))`` and its sector integrals.

Here ``z = x1 + i x2`` with the principal square root, so ``u0`` is harmonic
off the negative real axis and decays like ``exp(-sqrt(s r) cos(theta/2))``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn

from .geometry import Sector, delta_W
from .quadrature import QuadratureError, gk_quad, polar_quad

__all__ = [
    "CgoParams", "eval_u0", "grad_u0", "mu", "omega", "mu_sum",
    "sector_integral_u0", "boundary_integral_u0", "quad_sector", "decay_slope",
    "xalpha_bound", "tail_bound", "tail_bound_sharp", "u0_l2_bound", "weighted_l2_bound",
    "abs_moment_W", "tail_integral", "weighted_l2_norm_sq", "u0_l2_norm_sq",
    "zeta_integral", "zeta_bound", "truncation_radius", "sector_integral_by_quadrature",
    "boundary_expansion_check", "BoundaryExpansionReport", "slope_csv",
]


@dataclass(frozen=True)
class CgoParams:
    s: float

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"s must be positive, got {self.s}")


def _polar(x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, float)
    return np.hypot(x[..., 0], x[..., 1]), np.arctan2(x[..., 1], x[..., 0])


def _check_s(s):
    if not np.all(np.asarray(s) > 0):
        raise ValueError("s must be positive")


def _u0_polar(s, r, theta):
    return np.exp(-np.sqrt(s * r) * np.exp(0.5j * theta))


def eval_u0(s: float, x, *, polar: bool = False) -> np.ndarray:
    """Evaluate ``u0(sx)``.

    ``x`` is Cartesian ``(..., 2)`` or, with ``polar=True``, ``(r, theta)``.
    Points on the closed negative real axis (other than the origin) are on
    the branch cut and rejected.
    """
    _check_s(s)
    if polar:
        x = np.asarray(x, float)
        r, th = x[..., 0], x[..., 1]
        if np.any(r < 0):
            raise ValueError("negative radius")
        if np.any((r > 0) & ((th <= -math.pi) | (th >= math.pi))):
            raise ValueError("point on the branch cut theta = ±pi")
    else:
        x = np.asarray(x, float)
        r, th = _polar(x)
        if np.any((r > 0) & (x[..., 1] == 0) & (x[..., 0] < 0)):
            raise ValueError("point on the branch cut (negative real axis)")
    return _u0_polar(s, r, th)


def grad_u0(s: float, x) -> np.ndarray:
    """Cartesian gradient ``(du0/dx1, du0/dx2)``, shape ``(..., 2)``.

    Uses ``du0/dx1 = -sqrt(s)/(2 sqrt(r)) exp(-sqrt(sr) e^{i theta/2} - i theta/2)``
    and ``du0/dx2 = i du0/dx1`` (``u0`` is holomorphic in ``x1 + i x2``).
    """
    _check_s(s)
    x = np.asarray(x, float)
    r, th = _polar(x)
    if np.any(r == 0):
        raise ValueError("gradient is singular at the vertex r = 0")
    if np.any((x[..., 1] == 0) & (x[..., 0] < 0)):
        raise ValueError("point on the branch cut (negative real axis)")
    d1 = -np.sqrt(s) / (2 * np.sqrt(r)) * np.exp(-np.sqrt(s * r) * np.exp(0.5j * th) - 0.5j * th)
    return np.stack([d1, 1j * d1], axis=-1)


def omega(theta):
    """``-cos(theta/2 + pi) = cos(theta/2)``, the real part of ``mu``."""
    return -np.cos(np.asarray(theta) / 2 + np.pi)


def mu(theta):
    """``mu(theta) = -cos(theta/2+pi) - i sin(theta/2+pi) = e^{i theta/2}``."""
    t = np.asarray(theta) / 2 + np.pi
    return -np.cos(t) - 1j * np.sin(t)


def mu_sum(theta_m: float, theta_M: float) -> complex:
    """``mu(theta_m)^-2 + mu(theta_M)^-2``, computed as ``e^{-i theta_m} + e^{-i theta_M}``.

    Using the exponential form makes the degenerate case ``theta_M - theta_m = pi``
    vanish exactly whenever the two angles are exact negatives mod ``2 pi``.
    """
    if not (-math.pi < theta_m < theta_M < math.pi):
        raise ValueError("need -pi < theta_m < theta_M < pi")
    return complex(np.exp(-1j * theta_m) + np.exp(-1j * theta_M))


# -- closed forms --------------------------------------------------------

def sector_integral_u0(sector: Sector, s: float) -> complex:
    """Exact ``∫_W u0(sx) dx = 6i (e^{-2i theta_M} - e^{-2i theta_m}) s^{-2}`` over the infinite sector."""
    _check_s(s)
    return complex(6j * (np.exp(-2j * sector.theta_M) - np.exp(-2j * sector.theta_m)) / s ** 2)


def boundary_integral_u0(theta: float, s: float, h: float) -> complex:
    """Exact ``∫_0^h u0(s r e^{i theta}) dr``.

    ``2/s (mu^-2 - mu^-2 e^{-sqrt(sh) mu} - mu^-1 sqrt(sh) e^{-sqrt(sh) mu})``.
    """
    _check_s(s)
    if h < 0:
        raise ValueError("h must be non-negative")
    m = complex(mu(theta))
    t = math.sqrt(s * h)
    e = np.exp(-t * m)
    return complex(2 / s * (m ** -2 - m ** -2 * e - t * e / m))


# -- bounds ----------------------------------------------------------------

def xalpha_bound(sector: Sector, s: float, alpha: float) -> float:
    """Upper bound ``2 (theta_M-theta_m) Gamma(2a+4) delta_W^{-2a-4} s^{-a-2}`` for ``∫_W |u0||x|^a``."""
    d = delta_W(sector)
    return 2 * sector.opening * gamma_fn(2 * alpha + 4) / d ** (2 * alpha + 4) * s ** (-alpha - 2)


def tail_bound(sector: Sector, s: float, h: float) -> float:
    """Closed-form bound ``6 (theta_M-theta_m) delta_W^-4 s^-2 exp(-delta_W sqrt(hs)/2)`` for ``∫_{W\\B_h} |u0|``."""
    d = delta_W(sector)
    return 6 * sector.opening / d ** 4 / s ** 2 * math.exp(-d * math.sqrt(h * s) / 2)


def tail_bound_sharp(sector: Sector, s: float, h: float) -> float:
    """``2 (theta_M-theta_m) delta_W^-4 s^-2 Γ(4, delta_W sqrt(hs))``, valid for every ``s``.

    Substituting ``t = sqrt(sr) cos(theta/2)`` makes the radial tail an upper
    incomplete gamma function, decreasing in ``cos(theta/2) >= delta_W``.
    """
    d = delta_W(sector)
    x = d * math.sqrt(h * s)
    return 2 * sector.opening / d ** 4 / s ** 2 * math.exp(-x) * (x ** 3 + 3 * x * x + 6 * x + 6)


def u0_l2_bound(sector: Sector, s: float, h: float, Theta: float = 0.0) -> float:
    """``(theta_M-theta_m) exp(-2 sqrt(s Theta) delta_W) h^2 / 2``; ``Theta = 0`` is the loosest case."""
    return sector.opening * math.exp(-2 * math.sqrt(s * Theta) * delta_W(sector)) * h * h / 2


def weighted_l2_bound(sector: Sector, s: float, alpha: float) -> float:
    """Bound ``s^{-(2a+2)} 2 (theta_M-theta_m) (4 delta_W^2)^{-(2a+2)} Gamma(4a+4)`` on ``‖|x|^a u0‖^2_{L2(S_h)}``."""
    d = delta_W(sector)
    return s ** (-(2 * alpha + 2)) * 2 * sector.opening / (4 * d * d) ** (2 * alpha + 2) * gamma_fn(4 * alpha + 4)


# -- quadrature ------------------------------------------------------------

def truncation_radius(sector: Sector, s: float, decay_exponent: float = 60.0) -> float:
    """Radius beyond which ``|u0| <= exp(-decay_exponent)`` everywhere in the sector."""
    return (decay_exponent / delta_W(sector)) ** 2 / s


def quad_sector(integrand: Callable[[np.ndarray, np.ndarray], np.ndarray], sector: Sector,
                tol: float = 1e-10, *, budget: int = 100_000) -> complex:
    """Adaptive polar quadrature of ``integrand(x1, x2)`` over the truncated sector ``S_h``.

    ``tol`` is an absolute error target; failure to meet it within the panel
    budget raises :class:`~cornerwave.quadrature.QuadratureError`.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not math.isfinite(sector.h):
        raise ValueError("quad_sector needs a finite truncation radius h")
    return polar_quad(integrand, sector.theta_m, sector.theta_M, sector.h,
                      epsabs=tol, epsrel=1e-300, budget=budget)


def _radial_polar(f_r_theta, sector: Sector, r_lo: float, r_hi: float, *, epsabs: float, epsrel: float):
    """``∫∫ f(r, theta) r dr dtheta`` with f vectorized in r."""

    def radial(theta_vals):
        out = np.empty(len(theta_vals), dtype=complex)
        for i, th in enumerate(theta_vals):
            out[i] = gk_quad(lambda r, th=th: f_r_theta(r, th) * r, r_lo, r_hi,
                             epsabs=0.1 * epsabs, epsrel=0.1 * epsrel, grade="a" if r_lo == 0 else None)
        return out

    return complex(gk_quad(radial, sector.theta_m, sector.theta_M, epsabs=epsabs, epsrel=epsrel))


def sector_integral_by_quadrature(sector: Sector, s: float, h: float, *, epsrel: float = 1e-11):
    """``(∫_{S_h} u0, tail bound)``: truncated quadrature plus the analytic tail allowance."""
    f = lambda r, th: _u0_polar(s, r, th)
    val = _radial_polar(f, sector, 0.0, h, epsabs=1e-300, epsrel=epsrel)
    return val, tail_bound(sector, s, h)


def abs_moment_W(sector: Sector, s: float, alpha: float) -> float:
    """``∫_W |u0(sx)| |x|^alpha dx`` by quadrature (truncated where the integrand is below e^-60)."""
    R = truncation_radius(sector, s)
    f = lambda r, th: np.exp(-np.sqrt(s * r) * np.cos(th / 2)) * r ** alpha
    return _radial_polar(f, sector, 0.0, R, epsabs=1e-300, epsrel=1e-11).real


def tail_integral(sector: Sector, s: float, h: float) -> float:
    """``∫_{W \\ B_h} |u0(sx)| dx`` by quadrature."""
    R = max(truncation_radius(sector, s), 2 * h)
    f = lambda r, th: np.exp(-np.sqrt(s * r) * np.cos(th / 2))
    return _radial_polar(f, sector, h, R, epsabs=1e-300, epsrel=1e-11).real


def u0_l2_norm_sq(sector: Sector, s: float) -> float:
    """``‖u0(s·)‖^2_{L2(S_h)}``."""
    f = lambda r, th: np.exp(-2 * np.sqrt(s * r) * np.cos(th / 2))
    return _radial_polar(f, sector, 0.0, sector.h, epsabs=1e-300, epsrel=1e-11).real


def weighted_l2_norm_sq(sector: Sector, s: float, alpha: float) -> float:
    """``‖|x|^alpha u0(s·)‖^2_{L2(S_h)}``."""
    f = lambda r, th: r ** (2 * alpha) * np.exp(-2 * np.sqrt(s * r) * np.cos(th / 2))
    return _radial_polar(f, sector, 0.0, sector.h, epsabs=1e-300, epsrel=1e-11).real


def zeta_integral(s: float, h: float, zeta: float, omega_val: float) -> float:
    """``∫_0^h r^zeta exp(-sqrt(s r) omega) dr``."""
    if not omega_val > 0:
        raise ValueError("omega must be positive")
    return float(gk_quad(lambda r: r ** zeta * np.exp(-np.sqrt(s * r) * omega_val), 0.0, h,
                         epsabs=1e-300, epsrel=1e-12, grade="a"))


def zeta_bound(s: float, zeta: float, omega_val: float) -> float:
    """``2 Gamma(2 zeta + 2) omega^{-2 zeta - 2} s^{-zeta-1}``, the integral over ``(0, ∞)``."""
    return 2 * gamma_fn(2 * zeta + 2) / omega_val ** (2 * zeta + 2) * s ** (-zeta - 1)


# -- rates -----------------------------------------------------------------

N_DISCARD = 2


def decay_slope(sampler: Callable[[float], float], s_grid: Sequence[float], *,
                discard: int = N_DISCARD, return_values: bool = False):
    """Least-squares slope of ``log sampler(s)`` against ``log s``.

    The ``discard`` smallest grid values are sampled but left out of the fit
    (pre-asymptotic regime).
    """
    s_grid = np.sort(np.asarray(s_grid, float))
    if len(s_grid) < 5:
        raise ValueError("need at least 5 grid points")
    if np.any(s_grid <= 0):
        raise ValueError("grid must be positive")
    vals = np.array([float(sampler(s)) for s in s_grid])
    if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
        bad = s_grid[~(np.isfinite(vals) & (vals > 0))]
        raise ValueError(f"sampler returned non-positive values at s = {bad.tolist()}")
    x, y = np.log(s_grid[discard:]), np.log(vals[discard:])
    slope = float(np.polyfit(x, y, 1)[0])
    if return_values:
        return slope, s_grid, vals
    return slope


def slope_csv(s_values, values, bounds) -> str:
    """CSV text with columns ``s,value,bound``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s", "value", "bound"])
    for s, v, b in zip(s_values, values, bounds):
        w.writerow([repr(float(s)), repr(float(v)), repr(float(b))])
    return buf.getvalue()


# -- boundary expansion ----------------------------------------------------

@dataclass(frozen=True)
class BoundaryExpansionReport:
    s: tuple
    integral_minus: tuple
    integral_plus: tuple
    leading_minus: tuple
    leading_plus: tuple
    remainder: tuple
    slope: float

    def to_dict(self) -> dict:
        def cx(seq):
            return [[float(np.real(z)), float(np.imag(z))] for z in seq]

        return {
            "s": list(self.s),
            "integral_minus": cx(self.integral_minus),
            "integral_plus": cx(self.integral_plus),
            "leading_minus": cx(self.leading_minus),
            "leading_plus": cx(self.leading_plus),
            "remainder": list(self.remainder),
            "slope": self.slope,
        }


def _ray_integral(f, theta: float, s: float, h: float, epsabs: float = 1e-300) -> complex:
    c, sn = math.cos(theta), math.sin(theta)

    def g(r):
        return f(np.column_stack([r * c, r * sn])) * _u0_polar(s, r, theta)

    return complex(gk_quad(g, 0.0, h, epsabs=epsabs, epsrel=1e-12, grade="a"))


def boundary_expansion_check(sector: Sector, kernel, eta0: complex, s_grid: Sequence[float]):
    """Compare ``I2± = ∫_{Γ±} eta0 u0 v dσ`` with its leading term ``2 eta0 v(0) s^-1 (...)``.

    ``v`` is the Herglotz field of ``kernel``.  The remainder
    ``|I2- - lead-| + |I2+ - lead+|`` is integrated directly as
    ``∫ eta0 u0 (v - v(0))`` to avoid cancellation, and its log-log slope in
    ``s`` is reported.
    """
    from .herglotz import eval_quadrature

    h = sector.h
    if not math.isfinite(h):
        raise ValueError("sector must be truncated (finite h)")
    if kernel.k * h >= 1:
        raise ValueError(f"need k*h < 1, got {kernel.k * h:.4g}")
    v0 = complex(eval_quadrature(kernel, np.zeros((1, 2)))[0])
    v = lambda x: eval_quadrature(kernel, x)
    dv = lambda x: eval_quadrature(kernel, x) - v0
    im, ip, lm, lp, rem = [], [], [], [], []
    for s in s_grid:
        # v - v(0) carries roundoff of size eps |v0|; do not ask for less than that
        floor = 1e-14 * (abs(v0) + 1.0) / s
        im.append(eta0 * _ray_integral(v, sector.theta_m, s, h))
        ip.append(eta0 * _ray_integral(v, sector.theta_M, s, h))
        lm.append(eta0 * v0 * boundary_integral_u0(sector.theta_m, s, h))
        lp.append(eta0 * v0 * boundary_integral_u0(sector.theta_M, s, h))
        rem.append(abs(eta0 * _ray_integral(dv, sector.theta_m, s, h, floor))
                   + abs(eta0 * _ray_integral(dv, sector.theta_M, s, h, floor)))
    rem_arr = np.array(rem)
    if np.all(rem_arr == 0):
        slope = -math.inf
    else:
        slope = decay_slope(lambda s: rem_arr[list(s_grid).index(s)], s_grid)
    return BoundaryExpansionReport(tuple(float(s) for s in s_grid), tuple(im), tuple(ip),
                                   tuple(lm), tuple(lp), tuple(float(x) for x in rem), slope)
