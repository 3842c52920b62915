"""Herglotz wave functions with kernels given by truncated Fourier series.

A kernel ``g(phi) = sum_{|p|<=P} c_p e^{i p phi}`` on the unit circle defines

    v(x) = ∫_{S^1} exp(i k xi·x) g(xi) dσ(xi),

an entire solution of ``Δv + k² v = 0``.  By Jacobi–Anger,
``v(x) = 2π sum_p i^{|p|} J_{|p|}(k|x|) c_p e^{i p arg x}``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fem
from .geometry import TriMesh


@dataclass(frozen=True, eq=False)
class FourierKernel:
    """Kernel coefficients ``c_p`` for ``p = -P..P`` at wavenumber ``k``."""

    k: float
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex).reshape(-1)
        if len(c) % 2 != 1:
            raise ValueError("coeffs must have odd length 2P+1 (p = -P..P)")
        if not self.k >= 0:
            raise ValueError("k must be non-negative")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "k", float(self.k))

    @property
    def P(self) -> int:
        return (len(self.coeffs) - 1) // 2

    @property
    def orders(self) -> np.ndarray:
        return np.arange(-self.P, self.P + 1)

    def coeff(self, p: int) -> complex:
        return complex(self.coeffs[p + self.P]) if abs(p) <= self.P else 0j

    def norm(self) -> float:
        """``‖g‖_{L2(S^1)} = sqrt(2π sum |c_p|^2)``."""
        return float(math.sqrt(2 * math.pi * np.sum(np.abs(self.coeffs) ** 2)))

    def eval_kernel(self, phi) -> np.ndarray:
        phi = np.asarray(phi, float)
        return np.exp(1j * np.multiply.outer(phi, self.orders)) @ self.coeffs

    @classmethod
    def constant(cls, k: float, value: complex = 1.0) -> "FourierKernel":
        return cls(k, [value])

    @classmethod
    def single_mode(cls, k: float, p: int, value: complex = 1.0) -> "FourierKernel":
        c = np.zeros(2 * abs(p) + 1, complex)
        c[p + abs(p)] = value
        return cls(k, c)

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "coeffs": [[float(z.real), float(z.imag)] for z in self.coeffs]})

    @classmethod
    def from_json(cls, text: str) -> "FourierKernel":
        d = json.loads(text)
        c = np.array([complex(a, b) for a, b in d["coeffs"]])
        return cls(float(d["k"]), c)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "FourierKernel":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class FitReport:
    residual_h1: float
    kernel_norm: float
    reg_lambda: float
    P: int

    def to_dict(self) -> dict:
        return {"residual_h1": self.residual_h1, "kernel_norm": self.kernel_norm,
                "reg_lambda": self.reg_lambda, "P": self.P}


# -- Bessel functions ----------------------------------------------------

SMALL_ARG = 1e-5


def _miller_start(n_max: int, t_max: float) -> int:
    m = max(n_max, int(t_max)) + 20 + int(math.sqrt(40 * max(n_max, t_max, 1.0)))
    return m + (m % 2)


def bessel_sequence(n_max: int, t) -> np.ndarray:
    """``J_0(t) .. J_{n_max}(t)`` by Miller's downward recurrence.

    Returns shape ``(n_max + 1,) + t.shape``.  Normalization uses
    ``J_0 + 2 sum_k J_{2k} = 1``.
    """
    t = np.asarray(t, float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    if n_max < 0:
        raise ValueError("order must be non-negative")
    flat = t.reshape(-1)
    out = np.zeros((n_max + 1, flat.size))
    zero = flat == 0
    out[0, zero] = 1.0
    # two-term power series where 2n/t would overflow the recurrence
    tiny = (flat > 0) & (flat < SMALL_ARG)
    if np.any(tiny):
        h = flat[tiny] / 2
        for n in range(n_max + 1):
            out[n, tiny] = h ** n / math.factorial(n) * (1 - h * h / (n + 1))
    zero = zero | tiny
    tt = flat[~zero]
    if tt.size:
        m = _miller_start(n_max, float(tt.max()))
        j_next = np.zeros_like(tt)
        j_cur = np.full_like(tt, 1e-300)
        norm = np.zeros_like(tt)
        vals = np.zeros((n_max + 1, tt.size))
        for n in range(m, 0, -1):
            j_prev = (2.0 * n / tt) * j_cur - j_next
            j_next, j_cur = j_cur, j_prev
            # j_cur now holds the unnormalized J_{n-1}
            if n - 1 <= n_max:
                vals[n - 1] = j_cur
            if (n - 1) % 2 == 0 and n - 1 > 0:
                norm += 2 * j_cur
            big = np.abs(j_cur) > 1e250
            if np.any(big):
                scale = np.where(big, 1e-250, 1.0)
                j_cur *= scale
                j_next *= scale
                norm *= scale
                vals *= scale
        norm += j_cur  # J_0 term
        out[:, ~zero] = vals / norm
    return out.reshape((n_max + 1,) + t.shape)


def bessel_J(p: int, t) -> np.ndarray:
    """Bessel function of the first kind ``J_p(t)`` for integer ``p >= 0`` and ``t >= 0``."""
    if p < 0:
        raise ValueError("p must be non-negative")
    t_arr = np.asarray(t, float)
    res = bessel_sequence(p, t_arr)[p]
    return res if t_arr.ndim else float(res)


# -- evaluation ------------------------------------------------------------

def _points(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def quadrature_nodes(kernel: FourierKernel, radius: float) -> int:
    """Trapezoid node count ``max(64, 4 (P + k |x|))`` rounded up to an integer."""
    return int(max(64, math.ceil(4 * (kernel.P + kernel.k * radius))))


def eval_quadrature(kernel: FourierKernel, x) -> np.ndarray | complex:
    """Trapezoidal quadrature of ``∫ exp(i k xi·x) g(xi) dσ(xi)``."""
    pts, single = _points(x)
    rmax = float(np.max(np.hypot(pts[:, 0], pts[:, 1]))) if len(pts) else 0.0
    n = quadrature_nodes(kernel, rmax)
    phi = 2 * np.pi * np.arange(n) / n
    g = kernel.eval_kernel(phi)
    xi = np.column_stack([np.cos(phi), np.sin(phi)])
    vals = np.exp(1j * kernel.k * (pts @ xi.T)) @ g * (2 * np.pi / n)
    return complex(vals[0]) if single else vals


def eval_gradient(kernel: FourierKernel, x) -> np.ndarray:
    """Gradient ``∫ i k xi exp(i k xi·x) g(xi) dσ``, shape ``(n, 2)``."""
    pts, single = _points(x)
    rmax = float(np.max(np.hypot(pts[:, 0], pts[:, 1])))
    n = quadrature_nodes(kernel, rmax)
    phi = 2 * np.pi * np.arange(n) / n
    g = kernel.eval_kernel(phi)
    xi = np.column_stack([np.cos(phi), np.sin(phi)])
    e = np.exp(1j * kernel.k * (pts @ xi.T)) * g * (2 * np.pi / n)
    grad = 1j * kernel.k * (e @ xi)
    return grad[0] if single else grad


def gamma_p(kernel: FourierKernel, p: int, direction: float = 0.0) -> complex:
    """Cosine moment ``∫ g(phi) cos(p (phi - direction)) dphi`` for ``p >= 1``.

    ``direction`` is the polar angle of the evaluation point; the moments are
    taken relative to it.  Equals ``π (c_p e^{ip dir} + c_{-p} e^{-ip dir})``.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    return complex(np.pi * (kernel.coeff(p) * np.exp(1j * p * direction)
                            + kernel.coeff(-p) * np.exp(-1j * p * direction)))


def eval_jacobi_anger(kernel: FourierKernel, x, L: int) -> np.ndarray | complex:
    """Truncated series ``v(0) J_0(k|x|) + 2 sum_{p=1}^L gamma_p i^p J_p(k|x|)``."""
    if L < 0:
        raise ValueError("L must be non-negative")
    pts, single = _points(x)
    r = np.hypot(pts[:, 0], pts[:, 1])
    th = np.arctan2(pts[:, 1], pts[:, 0])
    J = bessel_sequence(L, kernel.k * r)
    v0 = 2 * np.pi * kernel.coeff(0)
    out = v0 * J[0]
    for p in range(1, L + 1):
        gam = np.pi * (kernel.coeff(p) * np.exp(1j * p * th) + kernel.coeff(-p) * np.exp(-1j * p * th))
        out = out + 2 * gam * (1j ** p) * J[p]
    return complex(out[0]) if single else out


def basis_matrix(k: float, P: int, x) -> np.ndarray:
    """Columns ``2π i^{|p|} J_{|p|}(k r) e^{i p theta}`` for ``p = -P..P``."""
    pts, _ = _points(x)
    r = np.hypot(pts[:, 0], pts[:, 1])
    th = np.arctan2(pts[:, 1], pts[:, 0])
    J = bessel_sequence(P, k * r)
    orders = np.arange(-P, P + 1)
    a = np.abs(orders)
    return 2 * np.pi * (1j ** a)[None, :] * J[a].T * np.exp(1j * np.outer(th, orders))


def embedding_ratio(kernel: FourierKernel, x) -> float:
    """``max (|v| + |∇v|) / (sqrt(2π) (1 + k) ‖g‖)`` over sample points (at most 1)."""
    v = np.abs(eval_quadrature(kernel, np.atleast_2d(x)))
    dv = np.linalg.norm(eval_gradient(kernel, np.atleast_2d(x)), axis=1)
    return float(np.max(v + dv) / (math.sqrt(2 * math.pi) * (1 + kernel.k) * kernel.norm()))


# -- fitting ---------------------------------------------------------------

def _h1_matrix(mesh: TriMesh):
    return fem.mass(mesh) + fem.stiffness(mesh)


def h1_misfit(a, b, mesh: TriMesh) -> float:
    """Discrete ``‖a - b‖_{H1}`` for nodal P1 fields on ``mesh``."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != (mesh.n_nodes,) or b.shape != (mesh.n_nodes,):
        raise ValueError("fields must have one value per mesh node")
    d = a - b
    return float(math.sqrt(max(np.vdot(d, _h1_matrix(mesh) @ d).real, 0.0)))


DEFAULT_REG_SCALE = 1e-8


def fit_kernel(target, mesh: TriMesh, k: float, P: int, reg_lambda: float | None = None):
    """Tikhonov fit of a Herglotz kernel to a nodal field in the discrete H1 norm.

    Minimizes ``‖Φc - target‖²_{H1} + reg_lambda ‖g‖²_{L2}`` where
    ``‖g‖² = 2π |c|²``.  ``reg_lambda=None`` uses ``1e-8`` times the largest
    eigenvalue of the normal matrix.
    """
    target = np.asarray(target, complex)
    if target.shape != (mesh.n_nodes,):
        raise ValueError("target must have one value per mesh node")
    if P < 0:
        raise ValueError("P must be non-negative")
    if reg_lambda is not None and reg_lambda < 0:
        raise ValueError("reg_lambda must be non-negative")
    Phi = basis_matrix(k, P, mesh.nodes)
    H = _h1_matrix(mesh)
    HPhi = H @ Phi
    N = Phi.conj().T @ HPhi
    N = 0.5 * (N + N.conj().T)
    rhs = HPhi.conj().T @ target
    ev = np.linalg.eigvalsh(N)
    lam_max = float(ev[-1])
    if reg_lambda is None:
        reg_lambda = DEFAULT_REG_SCALE * lam_max
    A = N + 2 * np.pi * reg_lambda * np.eye(len(N))
    smallest = float(ev[0]) + 2 * np.pi * reg_lambda
    if smallest <= 1e-14 * lam_max:
        raise np.linalg.LinAlgError(
            "normal equations are numerically singular; use reg_lambda > 0 or a smaller P")
    c = np.linalg.solve(A, rhs)
    kernel = FourierKernel(k, c)
    resid = h1_misfit(Phi @ c, target, mesh)
    return kernel, FitReport(resid, kernel.norm(), float(reg_lambda), int(P))
