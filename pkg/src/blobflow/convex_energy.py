"""Scalar convex analysis for internal-energy densities.

Implements the four energy densities (heat, porous medium, fast diffusion,
height constraint), their Moreau envelopes, the doubly regularized density

    f_reg(a) = (delta/2) a^2 + env_delta(a) - env_delta(0),   a >= 0,

its derivative, Legendre conjugate, and the H^-1-weight integrands
e(a) = int_0^a (s f'(s) - f(s))' ds together with slope-truncated variants.
All functions accept scalars or numpy arrays and are pure.

Extended-real convention: values outside the effective domain are IEEE +inf.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import xlogy

HEAT = "heat"
POROUS_MEDIUM = "porous_medium"
FAST_DIFFUSION = "fast_diffusion"
HEIGHT_CONSTRAINT = "height_constraint"

_KINDS = (HEAT, POROUS_MEDIUM, FAST_DIFFUSION, HEIGHT_CONSTRAINT)

INF = float("inf")


class ConvergenceError(RuntimeError):
    """A vectorized root solve failed to reach tolerance within its budget."""


@dataclass(frozen=True)
class EnergyFamily:
    """One admissible internal-energy density f on [0, inf).

    kind            one of heat, porous_medium, fast_diffusion, height_constraint
    m               exponent for the power-law families, None otherwise
    dimension_hint  ambient dimension, used to validate fast-diffusion exponents
    """

    kind: str
    m: float | None = None
    dimension_hint: int = 1

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown energy family kind {self.kind!r}")
        d = self.dimension_hint
        if not (isinstance(d, int) and d >= 1):
            raise ValueError("dimension_hint must be a positive integer")
        if self.kind in (HEAT, HEIGHT_CONSTRAINT):
            if self.m is not None:
                raise ValueError(f"{self.kind} takes no exponent")
        elif self.kind == POROUS_MEDIUM:
            if self.m is None or not self.m > 1.0:
                raise ValueError("porous_medium requires m > 1")
        else:
            lo = 1.0 - 2.0 / (d + 2.0)
            if self.m is None or not (lo < self.m < 1.0):
                raise ValueError(
                    f"fast_diffusion requires m in ({lo}, 1) for d={d}"
                )

    @staticmethod
    def heat(dimension_hint: int = 1) -> "EnergyFamily":
        return EnergyFamily(HEAT, None, dimension_hint)

    @staticmethod
    def porous_medium(m: float, dimension_hint: int = 1) -> "EnergyFamily":
        return EnergyFamily(POROUS_MEDIUM, float(m), dimension_hint)

    @staticmethod
    def fast_diffusion(m: float, dimension_hint: int = 1) -> "EnergyFamily":
        return EnergyFamily(FAST_DIFFUSION, float(m), dimension_hint)

    @staticmethod
    def height_constraint(dimension_hint: int = 1) -> "EnergyFamily":
        return EnergyFamily(HEIGHT_CONSTRAINT, None, dimension_hint)


@dataclass(frozen=True)
class RegularizedEnergy:
    """An energy family together with its regularization scales.

    delta is the quadratic/envelope scale; epsilon is the mollifier width it
    was derived from (carried along so downstream constants can use it).
    """

    family: EnergyFamily
    delta: float
    epsilon: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.delta) and self.delta > 0.0):
            raise ValueError("delta must be a positive finite real")
        if not (np.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ValueError("epsilon must be a positive finite real")

    @cached_property
    def moreau_zero(self) -> float:
        return float(moreau_value(self.family, self.delta, 0.0))

    @cached_property
    def derivative_at_zero(self) -> float:
        return float(reg_derivative(self, 0.0))

    @cached_property
    def lipschitz_of_derivative(self) -> float:
        # curvature of f_reg lies in [delta, delta + 1/delta]
        return self.delta + 1.0 / self.delta


def _prepare(a):
    arr = np.asarray(a, dtype=float)
    return arr, arr.ndim == 0


def _finish(arr: np.ndarray, scalar: bool):
    return float(arr) if scalar else arr


def _newton_bisect(g_and_gp, lo, hi, scale, max_iter: int = 200, tol: float = 1e-12):
    """Vectorized safeguarded Newton for increasing g with a root in [lo, hi].

    Falls back to bisection whenever the Newton candidate leaves the bracket.
    Accepts a lane when |g| <= tol*scale or when the bracket has collapsed to
    floating-point resolution. Raises ConvergenceError otherwise.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    scale = np.broadcast_to(scale, lo.shape)
    b = 0.5 * (lo + hi)
    done = np.zeros(lo.shape, dtype=bool)
    for _ in range(max_iter):
        with np.errstate(all="ignore"):
            g, gp = g_and_gp(b)
        done |= np.abs(g) <= tol * scale
        done |= (hi - lo) <= 1e-15 * (np.abs(b) + 1e-300)
        if done.all():
            return b
        above = g > 0.0
        hi = np.where(above & ~done, np.minimum(hi, b), hi)
        lo = np.where(~above & ~done, np.maximum(lo, b), lo)
        with np.errstate(all="ignore"):
            cand = b - g / gp
        bad = ~np.isfinite(cand) | (cand <= lo) | (cand >= hi)
        step = np.where(bad, 0.5 * (lo + hi), cand)
        b = np.where(done, b, step)
    raise ConvergenceError(
        f"root solve missed tolerance {tol} on {int((~done).sum())} lane(s) "
        f"after {max_iter} iterations"
    )


def energy_value(family: EnergyFamily, a):
    """f(a), with +inf outside the effective domain."""
    arr, scalar = _prepare(a)
    k = family.kind
    neg = arr < 0.0
    safe = np.where(neg, 0.0, arr)
    if k == HEAT:
        val = xlogy(safe, safe) - safe
    elif k in (POROUS_MEDIUM, FAST_DIFFUSION):
        m = family.m
        with np.errstate(all="ignore"):
            val = safe**m / (m - 1.0)
        val = np.where(safe == 0.0, 0.0, val)
    else:
        val = np.zeros_like(safe)
        neg = neg | (arr > 1.0)
    out = np.where(neg, INF, val)
    return _finish(out, scalar)


def _energy_derivative(family: EnergyFamily, b):
    """f'(b) on the interior of the domain. b must be positive for the
    power-law and log families."""
    k = family.kind
    if k == HEAT:
        return np.log(b)
    if k in (POROUS_MEDIUM, FAST_DIFFUSION):
        m = family.m
        return m / (m - 1.0) * b ** (m - 1.0)
    return np.zeros_like(np.asarray(b, dtype=float))


def prox(family: EnergyFamily, delta: float, a):
    """Proximal point J_delta(a) = argmin_b f(b) + (b - a)^2 / (2 delta).

    Solved lane-wise from the stationarity condition with a bracketing
    Newton iteration (tolerance 1e-12 on the residual, at most 200 steps).
    """
    if not delta > 0.0:
        raise ValueError("delta must be positive")
    arr, scalar = _prepare(a)
    flat = arr.ravel()
    k = family.kind

    if k == HEIGHT_CONSTRAINT:
        return _finish(np.clip(arr, 0.0, 1.0), scalar)

    scale = np.maximum(1.0, np.abs(flat))
    if k == HEAT:
        # residual delta*log b + b - a, increasing in b
        def g_heat(b):
            return delta * np.log(b) + b - flat, delta / b + 1.0

        lo = np.zeros_like(flat)
        hi = np.maximum(flat, 1.0)
        out = _newton_bisect(g_heat, lo, hi, scale)
    elif k == POROUS_MEDIUM:
        m = family.m
        c = delta * m / (m - 1.0)
        pos = flat > 0.0
        out = np.zeros_like(flat)
        if pos.any():
            sub = flat[pos]

            def g_pme(b):
                return (
                    b + c * b ** (m - 1.0) - sub,
                    1.0 + c * (m - 1.0) * b ** (m - 2.0),
                )

            out[pos] = _newton_bisect(
                g_pme, np.zeros_like(sub), sub, np.maximum(1.0, sub)
            )
    else:
        m = family.m
        c = delta * m / (1.0 - m)  # b - a = c * b**(m-1), c > 0

        def g_fd(b):
            return b - c * b ** (m - 1.0) - flat, 1.0 + c * (1.0 - m) * b ** (m - 2.0)

        t = c ** (1.0 / (2.0 - m))  # root when a = 0
        lo = np.full_like(flat, 1e-300)
        hi = np.maximum(flat, 0.0) + t
        out = _newton_bisect(g_fd, lo, hi, scale)
    return _finish(out.reshape(arr.shape), scalar)


def moreau_value(family: EnergyFamily, delta: float, a):
    """Moreau envelope env_delta(a) = f(J) + (a - J)^2 / (2 delta)."""
    arr, scalar = _prepare(a)
    j = np.asarray(prox(family, delta, arr))
    val = energy_value(family, j) + (arr - j) ** 2 / (2.0 * delta)
    return _finish(val, scalar)


def reg_value(reg: RegularizedEnergy, a):
    """f_reg(a) for a >= 0, +inf for a < 0. Normalized so f_reg(0) = 0."""
    arr, scalar = _prepare(a)
    neg = arr < 0.0
    safe = np.where(neg, 0.0, arr)
    env = np.asarray(moreau_value(reg.family, reg.delta, safe))
    val = 0.5 * reg.delta * safe**2 + env - reg.moreau_zero
    out = np.where(neg, INF, val)
    return _finish(out, scalar)


def reg_derivative(reg: RegularizedEnergy, a):
    """f_reg'(a) = delta a + (a - J_delta(a)) / delta, for a >= 0.

    Smooth with curvature in [delta, delta + 1/delta]; in particular strictly
    increasing, so it admits a global inverse used by the conjugate.
    """
    arr, scalar = _prepare(a)
    if (arr < 0.0).any():
        raise ValueError("reg_derivative is defined on [0, inf)")
    j = np.asarray(prox(reg.family, reg.delta, arr))
    out = reg.delta * arr + (arr - j) / reg.delta
    return _finish(out, scalar)


def reg_conjugate_derivative(reg: RegularizedEnergy, b):
    """(f_reg*)'(b): the unique a >= 0 with f_reg'(a) = b, or 0 when
    b <= f_reg'(0).

    Inverted through the proximal variable: with j = J_delta(a) the pair
    satisfies a = j + delta f'(j) and b = delta a + f'(j), so j solves the
    scalar monotone equation delta j + (1 + delta^2) f'(j) = b, after which
    a = j + delta f'(j). The height constraint inverts its piecewise-linear
    derivative directly.
    """
    arr, scalar = _prepare(b)
    delta = reg.delta
    fam = reg.family
    b0 = reg.derivative_at_zero
    k = fam.kind

    if k == HEIGHT_CONSTRAINT:
        # f_reg'(a) = delta a on [0,1], then slope delta + 1/delta
        inner = arr / delta
        outer = (delta * arr + 1.0) / (delta * delta + 1.0)
        out = np.where(arr <= 0.0, 0.0, np.where(arr <= delta, inner, outer))
        return _finish(out, scalar)

    flat = arr.ravel()
    act = flat > b0
    out = np.zeros_like(flat)
    if act.any():
        bb = flat[act]
        cpl = 1.0 + delta * delta
        scale = np.maximum(1.0, np.abs(bb))
        if k == HEAT:

            def g_heat(j):
                return delta * j + cpl * np.log(j) - bb, delta + cpl / j

            lo = np.zeros_like(bb)
            hi = np.maximum(1.0, bb / delta)
            j = _newton_bisect(g_heat, lo, hi, scale)
        elif k == POROUS_MEDIUM:
            m = fam.m
            c = cpl * m / (m - 1.0)

            def g_pme(j):
                return delta * j + c * j ** (m - 1.0) - bb, delta + c * (m - 1.0) * j ** (m - 2.0)

            lo = np.zeros_like(bb)
            hi = bb / delta
            j = _newton_bisect(g_pme, lo, hi, scale)
        else:
            m = fam.m
            c = cpl * m / (1.0 - m)

            def g_fd(j):
                return delta * j - c * j ** (m - 1.0) - bb, delta + c * (1.0 - m) * j ** (m - 2.0)

            t = (c / delta) ** (1.0 / (2.0 - m))
            lo = np.full_like(bb, 1e-300)
            hi = np.maximum(bb, 0.0) / delta + t
            j = _newton_bisect(g_fd, lo, hi, scale)
        out[act] = j + delta * _energy_derivative(fam, j)
    return _finish(out.reshape(arr.shape), scalar)


def reg_conjugate(reg: RegularizedEnergy, b):
    """Legendre conjugate f_reg*(b) = sup_{a>=0} ab - f_reg(a).

    Evaluated at the maximizer a* = (f_reg*)'(b); nonnegative and
    nondecreasing by construction.
    """
    arr, scalar = _prepare(b)
    astar = np.asarray(reg_conjugate_derivative(reg, arr))
    val = astar * arr - np.asarray(reg_value(reg, astar))
    out = np.maximum(val, 0.0)
    return _finish(out, scalar)


def h1_slope(family: EnergyFamily, a):
    """e'(a) = a f'(a) - f(a): the dual-density integrand's slope."""
    arr, scalar = _prepare(a)
    k = family.kind
    neg = arr < 0.0
    safe = np.where(neg, 0.0, arr)
    if k == HEAT:
        val = safe
    elif k in (POROUS_MEDIUM, FAST_DIFFUSION):
        with np.errstate(all="ignore"):
            val = safe**family.m
        val = np.where(safe == 0.0, 0.0, val)
    else:
        val = np.zeros_like(safe)
        neg = neg | (arr > 1.0)
    return _finish(np.where(neg, INF, val), scalar)


def h1_density(family: EnergyFamily, a):
    """e(a) = int_0^a (s f'(s) - f(s))' ds, +inf outside dom(f).

    Closed forms: a^2/2 (heat), a^(m+1)/(m+1) (power laws), 0 (height).
    """
    arr, scalar = _prepare(a)
    k = family.kind
    neg = arr < 0.0
    safe = np.where(neg, 0.0, arr)
    if k == HEAT:
        val = 0.5 * safe**2
    elif k in (POROUS_MEDIUM, FAST_DIFFUSION):
        m = family.m
        with np.errstate(all="ignore"):
            val = safe ** (m + 1.0) / (m + 1.0)
        val = np.where(safe == 0.0, 0.0, val)
    else:
        val = np.zeros_like(safe)
        neg = neg | (arr > 1.0)
    return _finish(np.where(neg, INF, val), scalar)


def h1_density_quadrature(family: EnergyFamily, a, rtol: float = 1e-10):
    """Independent route to e(a) from its integral form a f(a) - 2 int_0^a f.

    Kept as the second leg of the closed-form cross-check and as the general
    path for densities without a closed form."""
    from scipy.integrate import quad

    arr, scalar = _prepare(a)
    flat = arr.ravel()
    out = np.empty_like(flat)
    for i, ai in enumerate(flat):
        if ai < 0.0 or (family.kind == HEIGHT_CONSTRAINT and ai > 1.0):
            out[i] = INF
        elif ai == 0.0:
            out[i] = 0.0
        else:
            tail, _ = quad(
                lambda s: energy_value(family, s), 0.0, ai, epsrel=rtol, epsabs=0.0
            )
            out[i] = ai * float(energy_value(family, ai)) - 2.0 * tail
    return _finish(out.reshape(arr.shape), scalar)


def truncation_point(family: EnergyFamily, m_level: float) -> float:
    """Smallest a with e'(a) >= m_level; the height family saturates at 1."""
    if not (np.isfinite(m_level) and m_level > 0.0):
        raise ValueError("m_level must be positive and finite")
    k = family.kind
    if k == HEIGHT_CONSTRAINT:
        return 1.0
    if k == HEAT:
        hi = m_level + 1.0
    else:
        hi = 1.0 + m_level + m_level ** (1.0 / family.m)

    def g(a):
        return np.asarray(h1_slope(family, a)) - m_level, _slope_derivative(family, a)

    root = _newton_bisect(
        g, np.zeros(1), np.full(1, hi), np.maximum(1.0, m_level) * np.ones(1)
    )
    return float(root[0])


def _slope_derivative(family: EnergyFamily, a):
    k = family.kind
    if k == HEAT:
        return np.ones_like(a)
    with np.errstate(all="ignore"):
        return family.m * a ** (family.m - 1.0)


def h1_truncated(family: EnergyFamily, m_level: float, a):
    """e_m: equal to e below the slope-m_level point a_m, affine with slope
    m_level above it. Domain [0, inf) regardless of dom(f)."""
    a_m = truncation_point(family, m_level)
    arr, scalar = _prepare(a)
    neg = arr < 0.0
    safe = np.where(neg, 0.0, arr)
    below = np.minimum(safe, a_m)
    base = np.asarray(h1_density(family, below))
    e_am = float(h1_density(family, a_m))
    val = np.where(safe <= a_m, base, e_am + m_level * (safe - a_m))
    return _finish(np.where(neg, INF, val), scalar)
