"""Reduction of 3D edge problems to 2D by averaging along the edge direction.

``R(g)(x') = ∫ ψ(x3) g(x', x3) dx3`` for a smooth non-negative bump ``ψ``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cgo import boundary_integral_u0, mu
from .quadrature import gk_quad

REDUCE_TOL = 1e-10


@dataclass(frozen=True)
class BumpFunction:
    """``ψ(x3) = scale · exp(-1/(1-t²))`` with ``t = (x3 - center)/L``, zero for ``|t| ≥ 1``."""

    L: float
    center: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("half width L must be positive")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def support(self) -> tuple[float, float]:
        return self.center - self.L, self.center + self.L

    @property
    def sup_norm(self) -> float:
        return self.scale * math.exp(-1.0)

    def _t(self, x3):
        t = (np.asarray(x3, float) - self.center) / self.L
        inside = np.abs(t) < 1
        return t, inside

    def __call__(self, x3) -> np.ndarray:
        t, inside = self._t(x3)
        out = np.zeros_like(t)
        ti = t[inside]
        out[inside] = self.scale * np.exp(-1.0 / (1.0 - ti * ti))
        return out

    def d1(self, x3) -> np.ndarray:
        t, inside = self._t(x3)
        out = np.zeros_like(t)
        ti = t[inside]
        a = 1.0 - ti * ti
        out[inside] = self.scale * np.exp(-1.0 / a) * (-2 * ti / a ** 2) / self.L
        return out

    def d2(self, x3) -> np.ndarray:
        """Analytic ``ψ''``."""
        t, inside = self._t(x3)
        out = np.zeros_like(t)
        ti = t[inside]
        a = 1.0 - ti * ti
        g1 = -2 * ti / a ** 2
        g2 = -2 / a ** 2 - 8 * ti * ti / a ** 3
        out[inside] = self.scale * np.exp(-1.0 / a) * (g2 + g1 * g1) / self.L ** 2
        return out

    def integrate(self, f: Callable[[np.ndarray], np.ndarray], tol: float = REDUCE_TOL):
        """``∫ ψ(x3) f(x3) dx3`` over the support; ``f`` may be vector valued."""
        a, b = self.support

        def integrand(x):
            w = self(x)
            fx = f(x)
            return w[:, None] * fx if np.ndim(fx) == 2 else w * fx

        return gk_quad(integrand, a, b, epsabs=tol * self.scale * self.L, epsrel=tol)


def c_psi(psi: BumpFunction) -> float:
    """``C(ψ) = ∫ ψ``."""
    return float(psi.integrate(lambda x: np.ones_like(x)))


@dataclass(frozen=True)
class CylinderField:
    """Function on ``S_h × (-M, M)``.

    ``value(xp, x3)`` takes points ``xp`` of shape ``(n, 2)`` and heights
    ``x3`` of shape ``(m,)`` and returns shape ``(m, n)``.  Manufactured
    separable fields ``f(x') g(x3)`` with ``Δ' f = -kp² f`` carry ``kp``.
    """

    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    M: float
    k: float
    kp: float | None = None
    beta: float | None = None

    @classmethod
    def plane_wave(cls, k: float, direction: float, beta: float, M: float = 1.0) -> "CylinderField":
        """``exp(i kp d'·x') exp(i beta x3)`` with ``kp² + beta² = k²``."""
        if abs(beta) > k:
            raise ValueError("need |beta| <= k")
        kp = math.sqrt(k * k - beta * beta)
        d = np.array([math.cos(direction), math.sin(direction)])

        def value(xp, x3):
            xp = np.atleast_2d(xp)
            return np.exp(1j * beta * np.asarray(x3))[:, None] * np.exp(1j * kp * (xp @ d))[None, :]

        return cls(value, M, k, kp, beta)

    @classmethod
    def bessel_cos(cls, k: float, beta: float, M: float = 1.0) -> "CylinderField":
        """``J0(kp |x'|) cos(beta x3)`` with ``kp² + beta² = k²``."""
        from scipy.special import j0

        if abs(beta) > k:
            raise ValueError("need |beta| <= k")
        kp = math.sqrt(k * k - beta * beta)

        def value(xp, x3):
            xp = np.atleast_2d(xp)
            return np.cos(beta * np.asarray(x3))[:, None] * j0(kp * np.hypot(xp[:, 0], xp[:, 1]))[None, :]

        return cls(value, M, k, kp, beta)

    @classmethod
    def zero(cls, k: float, M: float = 1.0) -> "CylinderField":
        return cls(lambda xp, x3: np.zeros((len(np.atleast_1d(x3)), len(np.atleast_2d(xp)))), M, k, k, 0.0)

    @classmethod
    def from_function(cls, f: Callable[[np.ndarray, np.ndarray], np.ndarray], k: float, M: float = 1.0):
        return cls(f, M, k)


def _check_support(g: CylinderField, psi: BumpFunction):
    a, b = psi.support
    if not (-g.M < a and b < g.M):
        raise ValueError(f"support ({a}, {b}) of psi is not inside (-{g.M}, {g.M})")


def reduce(g: CylinderField, psi: BumpFunction, points) -> np.ndarray:
    """``R(g)(x') = ∫ ψ(x3) g(x', x3) dx3`` at each of ``points`` (shape ``(n, 2)``)."""
    _check_support(g, psi)
    xp = np.atleast_2d(np.asarray(points, float))
    return np.asarray(psi.integrate(lambda x3: g.value(xp, x3)))


def reduce_weighted(g: CylinderField, weight: Callable[[np.ndarray], np.ndarray],
                    psi: BumpFunction, points) -> np.ndarray:
    """``∫ weight(x3) g(x', x3) dx3`` over the support of ``psi``."""
    _check_support(g, psi)
    xp = np.atleast_2d(np.asarray(points, float))
    a, b = psi.support
    return np.asarray(gk_quad(lambda x3: weight(x3)[:, None] * g.value(xp, x3), a, b,
                              epsabs=REDUCE_TOL * psi.scale * psi.L, epsrel=REDUCE_TOL))


def reduction_source(v: CylinderField, psi: BumpFunction, points) -> np.ndarray:
    """``G = -∫ ψ'' v dx3 - k² R(v)``, the right-hand side of ``Δ' R(v) = G``.

    Two integrations by parts give ``R(∂3² v) = ∫ ψ'' v``, which is where
    the sign of the first term comes from.
    """
    return -reduce_weighted(v, psi.d2, psi, points) - v.k ** 2 * reduce(v, psi, points)


def reduction_pde_residual(v: CylinderField, psi: BumpFunction, points) -> float:
    """``max |Δ' R(v) - G|`` over ``points`` for a manufactured separable Helmholtz field.

    ``Δ' R(v) = -kp² R(v)`` is exact for the separable field; ``R(v)`` and
    ``G`` come from quadrature.
    """
    if v.kp is None:
        raise ValueError("residual needs a manufactured field with known kp")
    lap = -v.kp ** 2 * reduce(v, psi, points)
    return float(np.max(np.abs(lap - reduction_source(v, psi, points)), initial=0.0))


def psi_transform(psi: BumpFunction, beta: float) -> complex:
    """``∫ ψ(x3) e^{i beta x3} dx3``."""
    return complex(psi.integrate(lambda x: np.exp(1j * beta * x)))


def holder_quotient(values: np.ndarray, points: np.ndarray, alpha: float) -> float:
    """Largest ``|f(x) - f(y)| / |x - y|^alpha`` over all sample pairs."""
    p = np.atleast_2d(points)
    v = np.asarray(values)
    i, j = np.triu_indices(len(p), 1)
    d = np.linalg.norm(p[i] - p[j], axis=1)
    keep = d > 0
    return float(np.max(np.abs(v[i] - v[j])[keep] / d[keep] ** alpha, initial=0.0))


# -- spherical Bessel functions ----------------------------------------------

def _double_factorial_odd(l: int) -> float:
    return float(np.prod(np.arange(1, 2 * l + 2, 2, dtype=float)))


def spherical_bessel_series(l: int, t, terms: int = 60) -> np.ndarray:
    """``j_l(t) = t^l/(2l+1)!! Σ_m (-t²/2)^m / (m! (2l+3)(2l+5)...(2l+2m+1))``."""
    t = np.asarray(t, float)
    term = np.ones_like(t)
    total = np.ones_like(t)
    for m in range(1, terms + 1):
        term = term * (-t * t / 2) / (m * (2 * l + 2 * m + 1))
        total = total + term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    return t ** l / _double_factorial_odd(l) * total


def spherical_bessel_j(l: int, t) -> np.ndarray:
    """Spherical Bessel function ``j_l(t)`` for ``l >= 0``, ``t >= 0``.

    Power series where ``t <= max(1, l)``, upward recurrence from
    ``j0 = sin t / t`` and ``j1`` elsewhere (stable for ``t > l``).
    """
    if l < 0 or int(l) != l:
        raise ValueError("order must be a non-negative integer")
    t = np.asarray(t, float)
    if np.any(t < 0):
        raise ValueError("argument must be non-negative")
    out = np.empty_like(t)
    small = t <= max(1.0, float(l))
    out[small] = spherical_bessel_series(l, t[small])
    tl = t[~small]
    if tl.size:
        a = np.sin(tl) / tl
        if l == 0:
            out[~small] = a
        else:
            b = np.sin(tl) / tl ** 2 - np.cos(tl) / tl
            for n in range(1, l):
                a, b = b, (2 * n + 1) / tl * b - a
            out[~small] = b
    return out if out.ndim else out[()]


# -- coefficient bounds ------------------------------------------------------

@dataclass(frozen=True)
class CheckReport:
    name: str
    value: float
    bracket_lo: float
    bracket_hi: float
    passed: bool
    note: str = ""

    def to_dict(self) -> dict:
        d = {"name": self.name, "value": self.value, "bracket_lo": self.bracket_lo,
             "bracket_hi": self.bracket_hi, "pass": self.passed}
        if self.note:
            d["note"] = self.note
        return d


def reports_json(reports) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=1, sort_keys=True)


def _centered(psi: BumpFunction):
    if psi.center != 0:
        raise ValueError("C1(psi) is defined for a bump centred at x3 = 0")


def c1_psi(psi: BumpFunction, rho: float) -> float:
    """``C1(ψ) = ∫_{-arctan(L/ρ)}^{arctan(L/ρ)} ψ(ρ tan w) sec³ w dw`` with ``ρ = |x'|``."""
    _centered(psi)
    if not rho > 0:
        raise ValueError("|x'| must be positive")
    w = math.atan(psi.L / rho)
    return float(gk_quad(lambda x: psi(rho * np.tan(x)) / np.cos(x) ** 3, -w, w,
                         epsabs=1e-14, epsrel=1e-12))


def c1_psi_direct(psi: BumpFunction, rho: float) -> float:
    """``|x'|^{-2} ∫ ψ(x3) sqrt(|x'|² + x3²) dx3``, the same constant before substitution."""
    _centered(psi)
    return float(psi.integrate(lambda x: np.sqrt(rho * rho + x * x))) / rho ** 2


def c1_psi_bound(psi: BumpFunction) -> float:
    """Distance-free bound ``2^{5/2} ‖ψ‖∞ arctan L``."""
    return 2 ** 2.5 * psi.sup_norm * math.atan(psi.L)


def c1_psi_proof_bound(psi: BumpFunction, rho: float) -> float:
    """``2^{5/2} ‖ψ‖∞ arctan(L/|x'|)``: what the sec-bound argument gives for ``L < |x'|``."""
    return 2 ** 2.5 * psi.sup_norm * math.atan(psi.L / rho)


def c1_psi_bound_check(psi: BumpFunction, rhos, *, proof_form: bool = False) -> list[CheckReport]:
    """``0 < C1(ψ) < bound`` on each ``|x'|`` in ``rhos``; points with ``|x'| <= L`` are skipped."""
    out = []
    for rho in rhos:
        rho = float(rho)
        name = f"c1_psi(|x'|={rho:g}, L={psi.L:g})"
        if rho <= psi.L:
            out.append(CheckReport(name, float("nan"), 0.0, float("nan"), True,
                                   note="skipped: |x'| <= L is outside the bound regime"))
            continue
        val = c1_psi(psi, rho)
        hi = c1_psi_proof_bound(psi, rho) if proof_form else c1_psi_bound(psi)
        out.append(CheckReport(name, val, 0.0, hi, bool(0 < val < hi)))
    return out


def c311_bracket(psi: BumpFunction, k: float) -> tuple[float, float]:
    """``(C(ψ)(1-2(kL)²)/(1-(kL)²), C(ψ)/(1-(kL)²))``."""
    c = c_psi(psi)
    kl2 = (k * psi.L) ** 2
    return c * (1 - 2 * kl2) / (1 - kl2), c / (1 - kl2)


def reduced_j0(psi: BumpFunction, k: float, r) -> np.ndarray:
    """``R(j0(k|x|))`` at ``|x'| = r``."""
    r = np.atleast_1d(np.asarray(r, float))
    return np.asarray(psi.integrate(
        lambda x3: spherical_bessel_j(0, k * np.sqrt(r[None, :] ** 2 + x3[:, None] ** 2))))


def c311_limit(psi: BumpFunction, k: float) -> float:
    """``R(j0)(0) = ∫ ψ(x3) j0(k|x3|) dx3``, the large-``s`` limit of the ratio."""
    return float(reduced_j0(psi, k, 0.0)[0])


def c311_ratio(theta: float, psi: BumpFunction, k: float, s: float, h: float) -> complex:
    """``∫_0^h u0(s r e^{iθ}) R(j0)(r) dr`` divided by ``∫_0^h u0(s r e^{iθ}) dr``.

    Raises if ``kL >= 1`` or ``k²(h² + L²) >= 1``.
    """
    if k * psi.L >= 1:
        raise ValueError("need kL < 1")
    if k * k * (h * h + psi.L ** 2) >= 1:
        raise ValueError("need k^2 (h^2 + L^2) < 1")
    m = complex(mu(theta))

    def f(r):
        return np.exp(-np.sqrt(s * r) * m) * reduced_j0(psi, k, r)

    num = gk_quad(f, 0.0, h, grade="a", epsabs=1e-14 / s, epsrel=1e-11)
    return complex(num / boundary_integral_u0(theta, s, h))


def c311_check(theta: float, psi: BumpFunction, k: float, s_grid, h: float) -> list[CheckReport]:
    """Bracket check of ``Re ratio`` at each ``s``."""
    lo, hi = c311_bracket(psi, k)
    out = []
    for s in s_grid:
        r = c311_ratio(theta, psi, k, s, h)
        out.append(CheckReport(f"c311_ratio(theta={theta:g}, s={s:g})", r.real, lo, hi,
                               bool(lo <= r.real <= hi), note=f"imag={r.imag:.3e}"))
    return out


@dataclass(frozen=True)
class MuSumResult:
    value: complex
    nonzero: bool


def weighted_mu_sum_check(theta_m: float, theta_M: float, c_minus: float, c_plus: float,
                          tol: float = 1e-12) -> MuSumResult:
    """``C⁻ μ(θm)^{-2} + C⁺ μ(θM)^{-2}`` and whether it is nonzero."""
    if not (-math.pi < theta_m < theta_M < math.pi):
        raise ValueError("need -pi < theta_m < theta_M < pi")
    z = complex(c_minus * mu(theta_m) ** -2 + c_plus * mu(theta_M) ** -2)
    return MuSumResult(z, abs(z) > tol * (abs(c_minus) + abs(c_plus)))
