"""Particle ensembles, initialization against a target density, and metrics.

An ensemble is N uniformly weighted particles in R^d stored as a read-only
(N, d) float64 array. Initialization places particles on exact quantiles of
a 1d target or rejection-samples any-dimensional targets with a seeded PCG64
generator. Metrics: second moment, sorted-quantile W1/W2 between equal-size
ensembles, and W1 against a reference density (CDF form in d=1, debiased
entropic transport in d=2).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

QUANTILE = "quantile"
REJECTION = "rejection"


class RejectionStallError(RuntimeError):
    """Rejection sampling accepted almost nothing; the proposal box is
    probably much larger than the effective support of the target."""


@dataclass(frozen=True)
class ParticleEnsemble:
    """Uniformly weighted particle cloud. positions is (N, d), read-only."""

    positions: np.ndarray
    time: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        pos = np.array(self.positions, dtype=float, copy=True)
        if pos.ndim != 2 or pos.shape[0] < 1:
            raise ValueError("positions must be a nonempty (N, d) array")
        if not np.isfinite(pos).all():
            raise ValueError("positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def weight(self) -> float:
        return 1.0 / self.n

    def advanced(self, positions: np.ndarray, time: float) -> "ParticleEnsemble":
        """Same cloud identity (seed), new positions and clock."""
        return ParticleEnsemble(positions, time=time, seed=self.seed)


@dataclass(frozen=True)
class ReferenceDensity:
    """A probability density on a box, with an optional closed-form CDF (d=1).

    pdf maps (n, d) points to (n,) values; cdf maps (n,) abscissae to (n,)
    in one dimension. box = (lo, hi) arrays of length d and should capture
    essentially all of the mass; metrics integrate over it.
    """

    name: str
    dim: int
    pdf: Callable[[np.ndarray], np.ndarray]
    box: tuple[np.ndarray, np.ndarray]
    cdf: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self) -> None:
        lo = np.atleast_1d(np.asarray(self.box[0], dtype=float))
        hi = np.atleast_1d(np.asarray(self.box[1], dtype=float))
        if lo.shape != (self.dim,) or hi.shape != (self.dim,):
            raise ValueError("box endpoints must have shape (d,)")
        if not (hi > lo).all():
            raise ValueError("box must have positive extent")
        object.__setattr__(self, "box", (lo, hi))

    def numeric_cdf(self, resolution: int = 8192) -> Callable[[np.ndarray], np.ndarray]:
        """Tabulated CDF from the pdf (d=1): cumulative trapezoid + interp."""
        if self.dim != 1:
            raise ValueError("numeric_cdf is one-dimensional")
        lo, hi = self.box
        xs = np.linspace(lo[0], hi[0], resolution)
        vals = self.pdf(xs[:, None])
        steps = 0.5 * np.diff(xs) * (vals[1:] + vals[:-1])
        cum = np.concatenate([[0.0], np.cumsum(steps)])
        total = cum[-1]

        def cdf(x):
            x = np.asarray(x, dtype=float)
            return np.interp(x, xs, cum / max(total, 1e-300), left=0.0, right=1.0)

        return cdf


def quantiles_from_cdf(cdf, lo: float, hi: float, u: np.ndarray) -> np.ndarray:
    """Invert a nondecreasing CDF at levels u by vectorized bisection."""
    u = np.asarray(u, dtype=float)
    a = np.full(u.shape, float(lo))
    b = np.full(u.shape, float(hi))
    for _ in range(200):
        mid = 0.5 * (a + b)
        below = np.asarray(cdf(mid)) < u
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
        if np.max(b - a) <= 1e-13 * max(abs(lo), abs(hi), 1.0):
            break
    return 0.5 * (a + b)


def _smoothed_target_1d(target: ReferenceDensity, alpha: float) -> ReferenceDensity:
    """Convolve a 1d target with a Gaussian of width alpha (tabulated)."""
    lo, hi = target.box
    pad = 6.0 * alpha
    n = 8192
    xs = np.linspace(lo[0] - pad, hi[0] + pad, n)
    h = xs[1] - xs[0]
    vals = target.pdf(xs[:, None])
    half = int(np.ceil(pad / h))
    ker_x = np.arange(-half, half + 1) * h
    ker = np.exp(-0.5 * (ker_x / alpha) ** 2)
    ker /= ker.sum()
    sm = np.convolve(vals, ker, mode="same")
    steps = 0.5 * h * (sm[1:] + sm[:-1])
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    cum /= max(cum[-1], 1e-300)

    def pdf(pts):
        return np.interp(np.asarray(pts, dtype=float)[:, 0], xs, sm, left=0.0, right=0.0)

    def cdf(x):
        return np.interp(np.asarray(x, dtype=float), xs, cum, left=0.0, right=1.0)

    return ReferenceDensity(
        name=f"{target.name}+smooth({alpha})",
        dim=1,
        pdf=pdf,
        box=(xs[:1], xs[-1:]),
        cdf=cdf,
    )


def prepare_initial_particles(
    target: ReferenceDensity,
    n: int,
    seed: int = 0,
    mode: str = QUANTILE,
    alpha: float = 0.0,
) -> ParticleEnsemble:
    """Deterministic initial cloud for a target density.

    quantile: particle i sits at the (i - 1/2)/n quantile (d=1 only).
    rejection: seeded rejection sampling from the uniform proposal on the
    target's box; stalls raise RejectionStallError.
    alpha > 0 pre-smooths the target by a Gaussian of that width.
    """
    if n < 1:
        raise ValueError("need at least one particle")
    if mode == QUANTILE:
        if target.dim != 1:
            raise ValueError("quantile initialization needs a one-dimensional target")
        work = _smoothed_target_1d(target, alpha) if alpha > 0.0 else target
        cdf = work.cdf if work.cdf is not None else work.numeric_cdf()
        lo, hi = work.box
        u = (np.arange(n) + 0.5) / n
        xs = quantiles_from_cdf(cdf, lo[0], hi[0], u)
        return ParticleEnsemble(xs[:, None], time=0.0, seed=seed)
    if mode == REJECTION:
        rng = np.random.default_rng(seed)
        lo, hi = target.box
        d = target.dim
        probe = lo + (hi - lo) * rng.random((4096, d))
        bound = 1.2 * float(np.max(target.pdf(probe)))
        if not (np.isfinite(bound) and bound > 0.0):
            raise RejectionStallError("target density vanishes on probe points")
        out = np.empty((n, d))
        got = 0
        proposed = 0
        while got < n:
            batch = max(1024, 4 * (n - got))
            pts = lo + (hi - lo) * rng.random((batch, d))
            keep = rng.random(batch) * bound < target.pdf(pts)
            take = min(int(keep.sum()), n - got)
            out[got : got + take] = pts[keep][:take]
            got += take
            proposed += batch
            if proposed >= 100_000 and got < max(1, 1e-4 * proposed):
                raise RejectionStallError(
                    f"accepted {got} of {proposed} proposals; "
                    "check the target/box pairing"
                )
        if alpha > 0.0:
            out = out + rng.normal(scale=alpha, size=out.shape)
        return ParticleEnsemble(out, time=0.0, seed=seed)
    raise ValueError(f"unknown initialization mode {mode!r}")


def second_moment(e: ParticleEnsemble) -> float:
    """mean |x_i|^2 over the cloud."""
    return float(np.mean(np.einsum("ij,ij->i", e.positions, e.positions)))


def _sorted_1d(e: ParticleEnsemble) -> np.ndarray:
    if e.dim != 1:
        raise ValueError("sorted-quantile metrics are one-dimensional")
    return np.sort(e.positions[:, 0])


def w1_1d(a: ParticleEnsemble, b: ParticleEnsemble) -> float:
    """W1 between two equal-size uniform clouds: mean sorted gap."""
    if a.n != b.n:
        raise ValueError("sorted-quantile W1 needs equal particle counts")
    return float(np.mean(np.abs(_sorted_1d(a) - _sorted_1d(b))))


def w2_1d(a: ParticleEnsemble, b: ParticleEnsemble) -> float:
    if a.n != b.n:
        raise ValueError("sorted-quantile W2 needs equal particle counts")
    return float(np.sqrt(np.mean((_sorted_1d(a) - _sorted_1d(b)) ** 2)))


def w1_vs_density(
    e: ParticleEnsemble, ref: ReferenceDensity, resolution: int = 4096
) -> float:
    """W1 between the cloud and a reference density.

    d=1: integral of |F_cloud - F_ref| over the hull of box and particles.
    d=2: debiased entropic transport between the cloud and a grid
    discretization of the reference.
    """
    if e.dim != ref.dim:
        raise ValueError("dimension mismatch between ensemble and reference")
    if ref.dim == 1:
        xs_sorted = np.sort(e.positions[:, 0])
        lo = min(float(ref.box[0][0]), xs_sorted[0]) - 1e-9
        hi = max(float(ref.box[1][0]), xs_sorted[-1]) + 1e-9
        grid = np.linspace(lo, hi, resolution)
        f_emp = np.searchsorted(xs_sorted, grid, side="right") / e.n
        cdf = ref.cdf if ref.cdf is not None else ref.numeric_cdf()
        f_ref = np.asarray(cdf(grid))
        return float(np.trapezoid(np.abs(f_emp - f_ref), grid))
    if ref.dim == 2:
        return _sinkhorn_w1_2d(e, ref, resolution)
    raise ValueError("w1_vs_density supports d = 1 and 2")


def _grid_atoms_2d(ref: ReferenceDensity, per_axis: int):
    lo, hi = ref.box
    axes = [
        lo[i] + (hi[i] - lo[i]) * (np.arange(per_axis) + 0.5) / per_axis
        for i in range(2)
    ]
    xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    w = ref.pdf(pts)
    w = np.maximum(w, 0.0)
    total = w.sum()
    if total <= 0.0:
        raise ValueError("reference density vanishes on its box")
    return pts, w / total


def _entropic_cost(xa, wa, xb, wb, eta: float, sweeps: int = 500) -> float:
    cost = np.sqrt(
        np.maximum(
            np.sum((xa[:, None, :] - xb[None, :, :]) ** 2, axis=2), 0.0
        )
    )
    la = np.log(np.maximum(wa, 1e-300))
    lb = np.log(np.maximum(wb, 1e-300))
    f = np.zeros(len(wa))
    g = np.zeros(len(wb))
    for _ in range(sweeps):
        f = -eta * logsumexp((g[None, :] - cost) / eta + lb[None, :], axis=1)
        g = -eta * logsumexp((f[:, None] - cost) / eta + la[:, None], axis=0)
    return float(np.sum(wa * f) + np.sum(wb * g))


def _sinkhorn_w1_2d(e: ParticleEnsemble, ref: ReferenceDensity, resolution: int) -> float:
    per_axis = max(8, min(64, int(np.sqrt(resolution))))
    xb, wb = _grid_atoms_2d(ref, per_axis)
    xa = e.positions
    wa = np.full(e.n, e.weight)
    lo, hi = ref.box
    eta = 0.01 * float(np.linalg.norm(hi - lo))
    ab = _entropic_cost(xa, wa, xb, wb, eta)
    aa = _entropic_cost(xa, wa, xa, wa, eta)
    bb = _entropic_cost(xb, wb, xb, wb, eta)
    return float(max(ab - 0.5 * (aa + bb), 0.0))


def save_snapshot(e: ParticleEnsemble, path) -> None:
    """CSV with one row per particle; floats use shortest round-trip form."""
    cols = ",".join(f"x{i + 1}" for i in range(e.dim))
    lines = [f"# blobflow snapshot N={e.n} d={e.dim} time={e.time!r} seed={e.seed}", cols]
    for row in e.positions:
        lines.append(",".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


_SNAP_HEADER = re.compile(
    r"^# blobflow snapshot N=(\d+) d=(\d+) time=(\S+) seed=(-?\d+)$"
)


def load_snapshot(path) -> ParticleEnsemble:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        match = _SNAP_HEADER.match(header)
        if match is None:
            raise ValueError(f"{path} is not a snapshot file")
        n, d = int(match.group(1)), int(match.group(2))
        time, seed = float(match.group(3)), int(match.group(4))
        fh.readline()  # column names
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape != (n, d):
        raise ValueError(f"snapshot body {data.shape} disagrees with header ({n}, {d})")
    return ParticleEnsemble(data, time=time, seed=seed)
