"""The regularized particle flow and its runtime diagnostics.

Particles move by x_i' = -grad p(x_i) - v(x_i) where p = phi_eps * q,
q = f_reg'(mu), mu = phi_eps * (particle empirical measure). Convolutions are
evaluated by midpoint quadrature on a tensor grid that tracks the cloud;
fields are rebuilt at every integrator stage. Diagnostics per record: energy,
mollified entropy, second moment, dissipation residual, cross-term sign,
stability constant, and optional W1-to-reference and mollifier-exchange
residuals.

Determinism: every reduction sums contiguous arrays along a fixed axis in
index order with fixed chunk sizes, so identical inputs give bit-identical
trajectories regardless of thread settings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import xlogy

from .convex_energy import RegularizedEnergy, reg_derivative, reg_value
from .ensemble import ParticleEnsemble, ReferenceDensity, second_moment, w1_vs_density
from .mollifier import MollifierKernel, kernel_gradient, kernel_norms, mollified_density

EULER = "euler"
RK4 = "rk4"

_PRESSURE_BLOCK = 2**22


class GridBudgetError(RuntimeError):
    """The requested quadrature grid exceeds the node budget."""


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor-product midpoint grid covering the particle cloud.

    nodes are stored flattened in C order of the axis product; cell is the
    midpoint weight h_1 * ... * h_d.
    """

    lo: np.ndarray
    hi: np.ndarray
    shape: tuple[int, ...]
    spacing: np.ndarray
    nodes: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def cell(self) -> float:
        return float(np.prod(self.spacing))

    def covers(self, points: np.ndarray, slack: float = 0.0) -> bool:
        return bool(
            np.all(points >= self.lo + slack) and np.all(points <= self.hi - slack)
        )

    def interior_mask(self) -> np.ndarray:
        """Boolean mask of nodes not on any axis boundary."""
        mask = np.ones(self.shape, dtype=bool)
        for ax in range(self.dim):
            index = [slice(None)] * self.dim
            index[ax] = 0
            mask[tuple(index)] = False
            index[ax] = -1
            mask[tuple(index)] = False
        return mask.ravel()


def build_grid(
    e,
    epsilon: float,
    padding: float = 6.0,
    spacing_fraction: float = 0.25,
    node_budget: int = 20_000_000,
) -> QuadratureGrid:
    """Midpoint grid over the particle bounding box padded by padding*eps,
    with per-axis spacing at most spacing_fraction*eps."""
    if not epsilon > 0.0:
        raise ValueError("epsilon must be positive")
    if not padding > 0.0:
        raise ValueError("grid padding must be positive")
    if not 0.0 < spacing_fraction <= 1.0:
        raise ValueError("spacing_fraction must lie in (0, 1]")
    pos = np.asarray(getattr(e, "positions", e), dtype=float)
    if pos.ndim != 2:
        raise ValueError("positions must have shape (N, d)")
    lo = pos.min(axis=0) - padding * epsilon
    hi = pos.max(axis=0) + padding * epsilon
    target = spacing_fraction * epsilon
    counts = np.maximum(np.ceil((hi - lo) / target).astype(int), 4)
    total = int(np.prod(counts.astype(np.int64)))
    if total > node_budget:
        raise GridBudgetError(
            f"grid would need {total} nodes (counts {tuple(counts)}) for "
            f"spacing <= {target:.4g} on box {lo.tolist()} .. {hi.tolist()}, "
            f"exceeding the budget of {node_budget}"
        )
    spacing = (hi - lo) / counts
    axes = [lo[i] + spacing[i] * (np.arange(counts[i]) + 0.5) for i in range(len(lo))]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.column_stack([m.ravel() for m in mesh])
    return QuadratureGrid(
        lo=lo, hi=hi, shape=tuple(int(c) for c in counts), spacing=spacing, nodes=nodes
    )


@dataclass(frozen=True)
class FieldSnapshot:
    """mu, q = f_reg'(mu), optional zeta = f_reg*(q), and their node
    gradients on a quadrature grid. Carries the energy it was built with."""

    grid: QuadratureGrid
    reg: RegularizedEnergy
    mu: np.ndarray
    q: np.ndarray
    grad_mu: np.ndarray
    grad_q: np.ndarray
    zeta: Optional[np.ndarray] = None


def _node_gradients(grid: QuadratureGrid, values: np.ndarray) -> np.ndarray:
    tensor = values.reshape(grid.shape)
    if grid.dim == 1:
        grads = [np.gradient(tensor, grid.spacing[0], edge_order=2)]
    else:
        grads = np.gradient(tensor, *grid.spacing, edge_order=2)
    return np.column_stack([g.ravel() for g in grads])


def compute_fields(
    e,
    reg: RegularizedEnergy,
    k: MollifierKernel,
    grid: QuadratureGrid,
    with_zeta: bool = True,
) -> FieldSnapshot:
    """Evaluate mu, q, zeta and node gradients for the current cloud."""
    mu = mollified_density(e, k, grid.nodes)
    q = np.asarray(reg_derivative(reg, mu))
    zeta = None
    if with_zeta:
        # Fenchel-Young equality at the maximizer: f*(f'(mu)) = mu q - f(mu)
        zeta = np.maximum(mu * q - np.asarray(reg_value(reg, mu)), 0.0)
    return FieldSnapshot(
        grid=grid,
        reg=reg,
        mu=mu,
        q=q,
        grad_mu=_node_gradients(grid, mu),
        grad_q=_node_gradients(grid, q),
        zeta=zeta,
    )


def pressure_gradient_at(fields: FieldSnapshot, k: MollifierKernel, xs) -> np.ndarray:
    """grad p(x) = sum_g w_g grad phi_eps(x - y_g) q(y_g), in node order.

    The ambient level q(0-density) is subtracted before summation: constants
    do not contribute to grad(phi * q) in the continuum, and removing them
    keeps the truncated grid sum exact near the box edge.
    """
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 2 or xs.shape[1] != fields.grid.dim:
        raise ValueError("query points must have shape (n, d) matching the grid")
    if not fields.grid.covers(xs):
        bad = np.where(
            ~np.all((xs >= fields.grid.lo) & (xs <= fields.grid.hi), axis=1)
        )[0]
        raise ValueError(f"query points outside the grid box at indices {bad[:8].tolist()}")
    nodes = fields.grid.nodes
    qs = (fields.q - fields.reg.derivative_at_zero) * fields.grid.cell
    g = nodes.shape[0]
    d = nodes.shape[1]
    out = np.empty_like(xs)
    step = max(1, _PRESSURE_BLOCK // max(g * d, 1))
    for s in range(0, xs.shape[0], step):
        block = xs[s : s + step]
        diff = block[None, :, :] - nodes[:, None, :]  # (G, n, d)
        contrib = kernel_gradient(k, diff) * qs[:, None, None]
        out[s : s + step] = contrib.sum(axis=0)
    return out


@dataclass(frozen=True)
class VelocityConfig:
    """Autonomous drift v(x): none, the gradient of a potential, or custom.

    w1inf_bound feeds the stability constant; when zero it is estimated on
    probe points at run start.
    """

    kind: str
    potential: Optional[Callable[[np.ndarray], np.ndarray]] = None
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    w1inf_bound: float = 0.0

    @staticmethod
    def none() -> "VelocityConfig":
        return VelocityConfig(kind="none")

    @staticmethod
    def gradient_of_potential(
        potential, grad=None, w1inf_bound: float = 0.0
    ) -> "VelocityConfig":
        return VelocityConfig(
            kind="grad_potential",
            potential=potential,
            grad=grad,
            w1inf_bound=w1inf_bound,
        )

    @staticmethod
    def quadratic() -> "VelocityConfig":
        """v = x, the gradient of |x|^2/2."""
        return VelocityConfig(
            kind="grad_potential",
            potential=lambda p: 0.5 * np.einsum("ij,ij->i", p, p),
            grad=lambda p: np.array(p, dtype=float, copy=True),
        )

    @staticmethod
    def custom(fn, w1inf_bound: float = 0.0) -> "VelocityConfig":
        return VelocityConfig(kind="custom", grad=fn, w1inf_bound=w1inf_bound)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self.kind == "none":
            return np.zeros_like(points)
        if self.kind == "grad_potential" and self.grad is None:
            return self._fd_gradient(points)
        return np.asarray(self.grad(points), dtype=float)

    def _fd_gradient(self, points: np.ndarray, h: float = 1e-6) -> np.ndarray:
        out = np.empty_like(points)
        for ax in range(points.shape[1]):
            shift = np.zeros(points.shape[1])
            shift[ax] = h
            out[:, ax] = (
                np.asarray(self.potential(points + shift))
                - np.asarray(self.potential(points - shift))
            ) / (2.0 * h)
        return out

    def validate_gradient(self, probes: np.ndarray, rtol: float = 1e-5) -> None:
        """For explicit gradients, check them against finite differences."""
        if self.kind != "grad_potential" or self.grad is None or self.potential is None:
            return
        analytic = np.asarray(self.grad(probes), dtype=float)
        numeric = self._fd_gradient(probes)
        scale = np.maximum(np.abs(numeric), 1.0)
        gap = np.max(np.abs(analytic - numeric) / scale)
        if gap > rtol:
            raise ValueError(
                f"potential gradient disagrees with finite differences "
                f"(relative gap {gap:.3e} > {rtol:.1e})"
            )

    def estimate_w1inf(self, probes: np.ndarray, h: float = 1e-5) -> float:
        """sup |v| + sup |Dv| over probe points (finite-difference Jacobian)."""
        if self.kind == "none":
            return 0.0
        vals = self.evaluate(probes)
        sup_v = float(np.max(np.linalg.norm(vals, axis=1), initial=0.0))
        sup_dv = 0.0
        for ax in range(probes.shape[1]):
            shift = np.zeros(probes.shape[1])
            shift[ax] = h
            col = (self.evaluate(probes + shift) - self.evaluate(probes - shift)) / (
                2.0 * h
            )
            sup_dv = max(sup_dv, float(np.max(np.abs(col), initial=0.0)))
        return sup_v + probes.shape[1] * sup_dv


def lipschitz_estimate(
    reg: RegularizedEnergy, k: MollifierKernel, velocity_w1inf: float = 0.0
) -> float:
    """Stability constant of the regularized velocity field:

    C = 2 |v|_W1inf + |grad phi|_W11 (Lip(f_reg') |phi|_inf + f_reg'(0)).

    The f_reg'(0) term enters with its sign. Kernel norms are cached per
    (kernel, d); d comes from the family's dimension hint.
    """
    d = reg.family.dimension_hint
    norms = kernel_norms(k, d)
    return 2.0 * velocity_w1inf + norms.grad_w11 * (
        reg.lipschitz_of_derivative * norms.sup + reg.derivative_at_zero
    )


def energy_F_eps(fields: FieldSnapshot) -> float:
    """F = sum_g w_g f_reg(mu_g); zero-density regions contribute nothing."""
    return float(np.sum(np.asarray(reg_value(fields.reg, fields.mu))) * fields.grid.cell)


def entropy_mollified(fields: FieldSnapshot) -> float:
    """S(mu) = sum_g w_g mu log mu with 0 log 0 = 0."""
    return float(np.sum(xlogy(fields.mu, fields.mu)) * fields.grid.cell)


def cross_term_min(fields: FieldSnapshot) -> tuple[float, float]:
    """(min over interior nodes of grad mu . grad q, grid sum of the same).

    The product equals f_reg''(mu) |grad mu|^2 >= 0 in exact arithmetic.
    """
    dot = np.einsum("gi,gi->g", fields.grad_mu, fields.grad_q)
    interior = fields.grid.interior_mask()
    min_val = float(dot[interior].min()) if interior.any() else float(dot.min())
    return min_val, float(dot.sum() * fields.grid.cell)


def dissipation_residual(window: Sequence["DiagnosticsRecord"]) -> float:
    """R(T) = F(T) - F(0) + trapezoid of the particle dissipation rate.

    Zero in the continuum by the energy dissipation identity; numerically
    the time-quadrature error of the integrator. Windows shorter than two
    records return 0.
    """
    if len(window) < 2:
        return 0.0
    times = np.array([r.t for r in window])
    rates = np.array([r.dissipation_rate for r in window])
    integral = float(np.trapezoid(rates, times))
    return float(window[-1].f_eps - window[0].f_eps + integral)


def exchange_residual(
    e, fields: FieldSnapshot, k: MollifierKernel, g_test: Callable[[np.ndarray], np.ndarray]
) -> float:
    """Norm of (1/N) sum_i g(x_i) grad p(x_i) - sum_g w_g g(y_g) mu grad q.

    Both express int g grad p d(rho) after moving the mollifier across the
    pairing; the gap decays with eps at fixed schedule.
    """
    pos = np.asarray(getattr(e, "positions", e), dtype=float)
    gp = pressure_gradient_at(fields, k, pos)
    gi = np.asarray(g_test(pos), dtype=float)
    lhs = (gi[:, None] * gp).sum(axis=0) / pos.shape[0]
    gn = np.asarray(g_test(fields.grid.nodes), dtype=float)
    rhs = ((gn * fields.mu)[:, None] * fields.grad_q).sum(axis=0) * fields.grid.cell
    return float(np.linalg.norm(lhs - rhs))


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One diagnostics row; dissipation_rate is carried for the residual
    quadrature but is not a CSV column."""

    t: float
    f_eps: float
    entropy_moll: float
    m2: float
    diss_residual: float
    min_cross_term: float
    lipschitz_estimate: float
    w1_to_reference: Optional[float] = None
    exchange_residual: Optional[float] = None
    dissipation_rate: float = 0.0

    CSV_HEADER = (
        "t,F_eps,entropy_moll,M2,diss_residual,min_cross_term,"
        "lipschitz_estimate,w1_to_reference,exchange_residual"
    )

    def csv_row(self) -> str:
        def num(v):
            return repr(float(v))

        opt = lambda v: "" if v is None else num(v)
        return ",".join(
            [
                num(self.t),
                num(self.f_eps),
                num(self.entropy_moll),
                num(self.m2),
                num(self.diss_residual),
                num(self.min_cross_term),
                num(self.lipschitz_estimate),
                opt(self.w1_to_reference),
                opt(self.exchange_residual),
            ]
        )


@dataclass(frozen=True)
class RunSpec:
    """Everything dynamics.run needs; cli builds one per experiment."""

    reg: RegularizedEnergy
    kernel: MollifierKernel
    velocity: VelocityConfig
    initial: ParticleEnsemble
    t_final: float
    dt: Optional[float] = None  # None: auto 0.5 / C_eps
    scheme: str = RK4
    record_every: int = 1
    reference: Optional[Callable[[float], ReferenceDensity]] = None
    exchange_test: Optional[Callable[[np.ndarray], np.ndarray]] = None
    grid_padding: float = 6.0
    grid_spacing_fraction: float = 0.25
    grid_node_budget: int = 20_000_000
    w1_resolution: int = 4096

    def __post_init__(self) -> None:
        if self.scheme not in (EULER, RK4):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.t_final < 0.0:
            raise ValueError("t_final must be nonnegative")
        if self.dt is not None and not self.dt > 0.0:
            raise ValueError("dt must be positive (or None for auto)")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


@dataclass(frozen=True)
class SimState:
    """Immutable integrator state: the cloud plus fields at its clock."""

    spec: RunSpec
    ensemble: ParticleEnsemble
    grid: QuadratureGrid
    fields: FieldSnapshot
    pressure_grad: np.ndarray  # grad p at the particles


@dataclass
class Trajectory:
    records: list[DiagnosticsRecord] = field(default_factory=list)
    ensembles: list[ParticleEnsemble] = field(default_factory=list)
    c_eps: float = 0.0
    dt: float = 0.0


def _fresh_grid(spec: RunSpec, positions: np.ndarray) -> QuadratureGrid:
    return build_grid(
        positions,
        spec.kernel.epsilon,
        padding=spec.grid_padding,
        spacing_fraction=spec.grid_spacing_fraction,
        node_budget=spec.grid_node_budget,
    )


def _ensure_grid(spec: RunSpec, positions: np.ndarray, grid: Optional[QuadratureGrid]):
    """Rebuild when any particle enters the 2-eps shell at the box edge."""
    if grid is None or not grid.covers(positions, slack=2.0 * spec.kernel.epsilon):
        return _fresh_grid(spec, positions)
    return grid


def _stage_velocity(spec: RunSpec, positions: np.ndarray, grid):
    """Velocity field for one integrator stage (fields rebuilt here)."""
    grid = _ensure_grid(spec, positions, grid)
    fields = compute_fields(positions, spec.reg, spec.kernel, grid, with_zeta=False)
    gp = pressure_gradient_at(fields, spec.kernel, positions)
    vel = -gp - spec.velocity.evaluate(positions)
    if not np.isfinite(vel).all():
        bad = np.where(~np.all(np.isfinite(vel), axis=1))[0]
        raise FloatingPointError(
            f"non-finite velocity for particle indices {bad[:8].tolist()}"
        )
    return vel, gp, fields, grid


def make_state(spec: RunSpec, ensemble: ParticleEnsemble) -> SimState:
    grid = _fresh_grid(spec, ensemble.positions)
    fields = compute_fields(ensemble.positions, spec.reg, spec.kernel, grid, with_zeta=False)
    gp = pressure_gradient_at(fields, spec.kernel, ensemble.positions)
    return SimState(spec=spec, ensemble=ensemble, grid=grid, fields=fields, pressure_grad=gp)


def step(state: SimState, dt: float, scheme: str | None = None) -> SimState:
    """Advance every particle by one explicit step of the chosen scheme.

    Stage fields are recomputed at each stage position; the grid follows the
    cloud whenever it drifts into the boundary shell.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    spec = state.spec
    scheme = spec.scheme if scheme is None else scheme
    x0 = state.ensemble.positions
    grid = state.grid

    v1 = -state.pressure_grad - spec.velocity.evaluate(x0)
    if not np.isfinite(v1).all():
        bad = np.where(~np.all(np.isfinite(v1), axis=1))[0]
        raise FloatingPointError(
            f"non-finite velocity for particle indices {bad[:8].tolist()}"
        )
    if scheme == EULER:
        x_new = x0 + dt * v1
    elif scheme == RK4:
        v2, _, _, grid = _stage_velocity(spec, x0 + 0.5 * dt * v1, grid)
        v3, _, _, grid = _stage_velocity(spec, x0 + 0.5 * dt * v2, grid)
        v4, _, _, grid = _stage_velocity(spec, x0 + dt * v3, grid)
        x_new = x0 + dt / 6.0 * (v1 + 2.0 * v2 + 2.0 * v3 + v4)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")

    t_new = state.ensemble.time + dt
    grid = _ensure_grid(spec, x_new, grid)
    fields = compute_fields(x_new, spec.reg, spec.kernel, grid, with_zeta=False)
    gp = pressure_gradient_at(fields, spec.kernel, x_new)
    return SimState(
        spec=spec,
        ensemble=state.ensemble.advanced(x_new, t_new),
        grid=grid,
        fields=fields,
        pressure_grad=gp,
    )


def _dissipation_rate(state: SimState) -> float:
    """(1/N) sum_i |grad p(x_i)|^2 + v(x_i) . grad p(x_i)."""
    gp = state.pressure_grad
    v = state.spec.velocity.evaluate(state.ensemble.positions)
    per = np.einsum("ij,ij->i", gp, gp) + np.einsum("ij,ij->i", v, gp)
    return float(per.mean())


def _record(
    state: SimState, trajectory: Trajectory, c_eps: float, on_record=None
) -> None:
    spec = state.spec
    t = state.ensemble.time
    f_now = energy_F_eps(state.fields)
    min_ct, _ = cross_term_min(state.fields)
    w1 = None
    if spec.reference is not None:
        w1 = w1_vs_density(state.ensemble, spec.reference(t), spec.w1_resolution)
    exch = None
    if spec.exchange_test is not None:
        exch = exchange_residual(
            state.ensemble, state.fields, spec.kernel, spec.exchange_test
        )
    rec = DiagnosticsRecord(
        t=t,
        f_eps=f_now,
        entropy_moll=entropy_mollified(state.fields),
        m2=second_moment(state.ensemble),
        diss_residual=0.0,
        min_cross_term=min_ct,
        lipschitz_estimate=c_eps,
        w1_to_reference=w1,
        exchange_residual=exch,
        dissipation_rate=_dissipation_rate(state),
    )
    window = trajectory.records + [rec]
    rec = replace(rec, diss_residual=dissipation_residual(window))
    trajectory.records.append(rec)
    trajectory.ensembles.append(state.ensemble)
    if on_record is not None:
        on_record(rec, state.ensemble)


def run(spec: RunSpec, on_record=None) -> Trajectory:
    """Integrate to t_final, recording diagnostics at the configured cadence.

    on_record(record, ensemble) fires at every record so callers can stream
    partial output; the trajectory is returned in full.
    """
    spec.velocity.validate_gradient(
        spec.initial.positions[:: max(1, spec.initial.n // 32)]
    )
    vbound = spec.velocity.w1inf_bound
    if vbound == 0.0 and spec.velocity.kind != "none":
        probes = spec.initial.positions[:: max(1, spec.initial.n // 256)]
        vbound = spec.velocity.estimate_w1inf(probes)
    c_eps = lipschitz_estimate(spec.reg, spec.kernel, velocity_w1inf=vbound)

    if spec.dt is not None:
        dt = spec.dt
    else:
        dt = 0.5 / max(c_eps, 1e-12)

    state = make_state(spec, spec.initial)
    trajectory = Trajectory(c_eps=c_eps, dt=dt)
    _record(state, trajectory, c_eps, on_record)
    if spec.t_final == 0.0:
        return trajectory

    n_steps = max(1, math.ceil(spec.t_final / dt - 1e-9))
    for k in range(1, n_steps + 1):
        target = min(k * dt, spec.t_final)
        h = target - state.ensemble.time
        if h <= 0.0:
            continue
        state = step(state, h)
        if k % spec.record_every == 0 or k == n_steps:
            _record(state, trajectory, c_eps, on_record)
    return trajectory
