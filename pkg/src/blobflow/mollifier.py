"""Radial mollifier kernels and mollified particle densities.

Two kernel shapes: a truncated Gaussian and a compactly supported polynomial
bump (1 - |x/eps|^2)_+^q. Both are even, nonnegative, unit-mass probability
densities scaled as eps^-d * shape(x / eps). Field evaluation against a
particle cloud is chunked, with summation always along the particle axis in
index order so reruns are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

GAUSSIAN = "gaussian"
BUMP = "bump"

# fixed chunk budgets keep the summation order independent of problem size
_VALUE_BLOCK = 2**23
_GRAD_BLOCK = 2**22


def _surface_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


@lru_cache(maxsize=None)
def _bump_constant(d: int, order: int) -> float:
    """Normalizing constant c with c * int_{|u|<=1} (1-|u|^2)^q du = 1."""
    val, _ = quad(lambda r: r ** (d - 1) * (1.0 - r * r) ** order, 0.0, 1.0)
    return 1.0 / (_surface_area(d) * val)


@dataclass(frozen=True)
class MollifierKernel:
    """A scaled radial kernel.

    kind        gaussian | bump
    epsilon     length scale
    effective_r tail-decay exponent quoted to the delta-schedule validity
                check; must exceed max(d, 2)
    truncation_radius_multiple
                Gaussian support cutoff in units of epsilon (exact zero
                beyond); the bump is supported on |x| <= epsilon
    order       bump exponent q >= 3 (C^2 smoothness), unused for gaussian
    """

    kind: str
    epsilon: float
    effective_r: float
    truncation_radius_multiple: float = 8.0
    order: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in (GAUSSIAN, BUMP):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not (np.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ValueError("epsilon must be a positive finite real")
        if not (np.isfinite(self.effective_r) and self.effective_r > 0.0):
            raise ValueError("effective_r must be positive")
        if self.kind == GAUSSIAN and self.truncation_radius_multiple <= 0.0:
            raise ValueError("truncation_radius_multiple must be positive")
        if self.kind == BUMP:
            if self.order is None or self.order < 3:
                raise ValueError("bump kernels need integer order >= 3")

    @staticmethod
    def gaussian(
        epsilon: float,
        dimension: int = 1,
        truncation_radius_multiple: float = 8.0,
        effective_r: float | None = None,
    ) -> "MollifierKernel":
        # super-polynomial decay: any finite tail exponent is honest, the
        # schedule check just needs one larger than max(d, 2)
        r = float(dimension + 3) if effective_r is None else float(effective_r)
        return MollifierKernel(GAUSSIAN, float(epsilon), r, truncation_radius_multiple)

    @staticmethod
    def bump(
        epsilon: float,
        dimension: int = 1,
        order: int = 4,
        effective_r: float | None = None,
    ) -> "MollifierKernel":
        r = float(dimension + 3) if effective_r is None else float(effective_r)
        return MollifierKernel(BUMP, float(epsilon), r, 1.0, int(order))

    @property
    def support_radius(self) -> float:
        if self.kind == GAUSSIAN:
            return self.truncation_radius_multiple * self.epsilon
        return self.epsilon


def _amplitude(k: MollifierKernel, d: int) -> float:
    if k.kind == GAUSSIAN:
        return (2.0 * math.pi) ** (-d / 2.0) * k.epsilon ** (-d)
    return _bump_constant(d, k.order) * k.epsilon ** (-d)


def kernel_value(k: MollifierKernel, x):
    """phi_eps(x) for points in the last axis: x has shape (..., d)."""
    x = np.asarray(x, dtype=float)
    if x.ndim < 1:
        raise ValueError("points must have an explicit spatial axis")
    d = x.shape[-1]
    r2 = np.einsum("...i,...i->...", x, x)
    eps = k.epsilon
    if k.kind == GAUSSIAN:
        out = _amplitude(k, d) * np.exp(-0.5 * r2 / (eps * eps))
        cut = k.support_radius
        return np.where(r2 <= cut * cut, out, 0.0)
    u2 = r2 / (eps * eps)
    core = np.where(u2 < 1.0, 1.0 - u2, 0.0)
    return _amplitude(k, d) * core**k.order


def kernel_gradient(k: MollifierKernel, x):
    """grad phi_eps(x), shape (..., d)."""
    x = np.asarray(x, dtype=float)
    if x.ndim < 1:
        raise ValueError("points must have an explicit spatial axis")
    d = x.shape[-1]
    eps = k.epsilon
    r2 = np.einsum("...i,...i->...", x, x)
    if k.kind == GAUSSIAN:
        val = _amplitude(k, d) * np.exp(-0.5 * r2 / (eps * eps))
        cut = k.support_radius
        val = np.where(r2 <= cut * cut, val, 0.0)
        return -x / (eps * eps) * val[..., None]
    u2 = r2 / (eps * eps)
    core = np.where(u2 < 1.0, 1.0 - u2, 0.0)
    fac = _amplitude(k, d) * k.order * core ** (k.order - 1) * (-2.0 / (eps * eps))
    return x * fac[..., None]


def _positions(particles) -> np.ndarray:
    pos = getattr(particles, "positions", particles)
    pos = np.asarray(pos, dtype=float)
    if pos.ndim != 2:
        raise ValueError("particle positions must have shape (N, d)")
    return pos


def mollified_density(particles, k: MollifierKernel, points):
    """(phi_eps * rho^N)(points): mean of kernel translates, shape (Q,)."""
    pos = _positions(particles)
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != pos.shape[1]:
        raise ValueError("query points must have shape (Q, d) matching particles")
    n = pos.shape[0]
    out = np.empty(pts.shape[0])
    step = max(1, _VALUE_BLOCK // max(n, 1))
    for s in range(0, pts.shape[0], step):
        block = pts[s : s + step]  # (q, d)
        diff = block[None, :, :] - pos[:, None, :]  # (N, q, d)
        out[s : s + step] = kernel_value(k, diff).sum(axis=0) / n
    return out


def mollified_density_gradient(particles, k: MollifierKernel, points):
    """grad(phi_eps * rho^N)(points), shape (Q, d)."""
    pos = _positions(particles)
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != pos.shape[1]:
        raise ValueError("query points must have shape (Q, d) matching particles")
    n, d = pos.shape
    out = np.empty_like(pts)
    step = max(1, _GRAD_BLOCK // max(n * d, 1))
    for s in range(0, pts.shape[0], step):
        block = pts[s : s + step]
        diff = block[None, :, :] - pos[:, None, :]
        out[s : s + step] = kernel_gradient(k, diff).sum(axis=0) / n
    return out


def radial_profile(k: MollifierKernel, d: int):
    """g, g', g'' of the radial profile phi_eps(x) = g(|x|), as callables."""
    amp = _amplitude(k, d)
    eps = k.epsilon
    if k.kind == GAUSSIAN:
        cut = k.support_radius

        def g(s):
            s = np.asarray(s, dtype=float)
            v = amp * np.exp(-0.5 * (s / eps) ** 2)
            return np.where(s <= cut, v, 0.0)

        def g1(s):
            s = np.asarray(s, dtype=float)
            return -s / eps**2 * g(s)

        def g2(s):
            s = np.asarray(s, dtype=float)
            return (s**2 / eps**4 - 1.0 / eps**2) * g(s)

        return g, g1, g2

    q = k.order

    def g(s):
        s = np.asarray(s, dtype=float)
        u2 = (s / eps) ** 2
        core = np.where(u2 < 1.0, 1.0 - u2, 0.0)
        return amp * core**q

    def g1(s):
        s = np.asarray(s, dtype=float)
        u2 = (s / eps) ** 2
        core = np.where(u2 < 1.0, 1.0 - u2, 0.0)
        return amp * q * core ** (q - 1) * (-2.0 * s / eps**2)

    def g2(s):
        s = np.asarray(s, dtype=float)
        u2 = (s / eps) ** 2
        core = np.where(u2 < 1.0, 1.0 - u2, 0.0)
        t1 = q * (q - 1) * core ** (q - 2) * (4.0 * s**2 / eps**4)
        t2 = -2.0 * q * core ** (q - 1) / eps**2
        return amp * np.where(u2 < 1.0, t1 + t2, 0.0)

    return g, g1, g2


@dataclass(frozen=True)
class KernelNorms:
    """L^inf of phi, L^1 of grad phi, L^1 of the Frobenius norm of D^2 phi."""

    sup: float
    grad_l1: float
    hess_l1: float

    @property
    def grad_w11(self) -> float:
        return self.grad_l1 + self.hess_l1


@lru_cache(maxsize=None)
def kernel_norms(k: MollifierKernel, d: int) -> KernelNorms:
    """Norms entering the velocity-field Lipschitz constant.

    Computed by radial quadrature of the profile; for a radial function the
    Hessian has eigenvalues g''(s) (radial, once) and g'(s)/s (tangential,
    d-1 times), so |D^2 phi|_F = sqrt(g''^2 + (d-1)(g'/s)^2).
    """
    g, g1, g2 = radial_profile(k, d)
    area = _surface_area(d)
    rad = k.support_radius

    grad_l1, _ = quad(
        lambda s: area * s ** (d - 1) * abs(g1(s)), 0.0, rad, limit=200
    )

    def hess_density(s):
        if s == 0.0:
            return 0.0
        tang = g1(s) / s
        return area * s ** (d - 1) * math.sqrt(g2(s) ** 2 + (d - 1) * tang**2)

    hess_l1, _ = quad(hess_density, 0.0, rad, limit=200)
    return KernelNorms(sup=float(g(0.0)), grad_l1=grad_l1, hess_l1=hess_l1)


@dataclass(frozen=True)
class KernelReport:
    """Outcome of validate_kernel; failures lists every violated check."""

    normalization_error: float
    even_ok: bool
    tail_ok: bool
    decay_exponent_ok: bool
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def validate_kernel(k: MollifierKernel, d: int, tol: float = 1e-8) -> KernelReport:
    """Check unit mass, evenness, tail domination, and the decay exponent.

    Never raises: all violations are collected in the report.
    """
    failures: list[str] = []
    g, g1, _ = radial_profile(k, d)
    area = _surface_area(d)
    rad = k.support_radius

    mass, _ = quad(lambda s: area * s ** (d - 1) * g(s), 0.0, rad, limit=200)
    norm_err = abs(mass - 1.0)
    if norm_err > tol:
        failures.append(f"normalization error {norm_err:.3e} exceeds {tol:.1e}")

    rng = np.random.default_rng(0)
    probes = rng.normal(scale=k.epsilon, size=(64, d))
    even_gap = float(
        np.max(np.abs(kernel_value(k, probes) - kernel_value(k, -probes)))
    )
    odd_gap = float(
        np.max(np.abs(kernel_gradient(k, probes) + kernel_gradient(k, -probes)))
    )
    even_ok = even_gap == 0.0 and odd_gap == 0.0
    if not even_ok:
        failures.append(f"kernel not even: value gap {even_gap:.3e}, gradient gap {odd_gap:.3e}")

    if k.kind == BUMP:
        # compact support dominates every polynomial tail; just confirm the
        # kernel actually vanishes at and beyond the support edge
        beyond = rad * np.array([1.0, 1.0 + 1e-9, 1.5, 4.0])
        tail_ok = bool(np.all(g(beyond) == 0.0))
        if not tail_ok:
            failures.append("kernel does not vanish beyond its support radius")
    else:
        # on the outer half of the support, s^r * phi(s) must not increase
        radii = np.linspace(0.5 * rad, rad, 33)
        tail = g(radii) * radii**k.effective_r
        tail_ok = bool(np.all(np.diff(tail) <= 1e-12 * max(tail.max(), 1e-300)))
        if not tail_ok:
            failures.append("tail bound s^r phi(s) increases on the outer support")

    decay_ok = k.effective_r > max(d, 2)
    if not decay_ok:
        failures.append(
            f"effective_r {k.effective_r} must exceed max(d,2) = {max(d, 2)}"
        )

    return KernelReport(
        normalization_error=norm_err,
        even_ok=even_ok,
        tail_ok=tail_ok,
        decay_exponent_ok=decay_ok,
        failures=failures,
    )
