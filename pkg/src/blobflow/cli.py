"""Command-line front end: run / converge / sample / selftest.

Config files are flat INI (key = value under sections); unknown sections or
keys are hard errors, and parse -> serialize -> parse is the identity. Thread
caps are applied through environment variables before numpy is imported, so
every heavy import in this module is deferred into the command bodies.

Exit codes: 0 success, 1 runtime failure (partial outputs are kept),
2 invalid configuration.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, replace
from typing import Optional

FAMILY_KINDS = ("heat", "porous_medium", "fast_diffusion", "height_constraint")
POWER_FAMILIES = ("porous_medium", "fast_diffusion")
KERNEL_KINDS = ("gaussian", "bump")
SCHEMES = ("rk4", "euler")
INIT_MODES = ("quantile", "rejection")
INITIAL_KINDS = ("heat_kernel", "barenblatt", "gaussian", "uniform")
REFERENCE_KINDS = ("none", "self_similar", "steady_state", "gaussian")
VELOCITY_KINDS = ("none", "quadratic")

OUT_ENV_VAR = "BLOBFLOW_OUT"

_SCHEMA = {
    "family": ("kind", "m", "dimension"),
    "kernel": ("kind", "effective_r", "order", "truncation_radius_multiple"),
    "flow": ("epsilon", "beta", "t_final", "dt", "scheme", "record_every"),
    "particles": ("n", "seed", "init", "alpha"),
    "velocity": ("kind",),
    "initial": ("kind", "t0", "sigma", "center", "half_width"),
    "reference": ("kind", "sigma", "resolution"),
    "output": ("directory",),
    "grid": ("padding", "spacing_fraction", "node_budget"),
}


class ConfigError(Exception):
    """Invalid configuration; carries every message found in one pass."""

    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


@dataclass(frozen=True)
class SimConfig:
    """One experiment, fully determined: family, kernel, schedule, particles,
    drift, initial profile, reference, outputs and grid overrides."""

    family_kind: str
    m: Optional[float]
    dimension: int
    kernel_kind: str
    effective_r: Optional[float]
    bump_order: int
    truncation_radius_multiple: float
    epsilons: tuple[float, ...]
    beta: float
    t_final: float
    dt: Optional[float]
    scheme: str
    record_every: int
    n_particles: int
    seed: int
    init_mode: str
    init_alpha: float
    velocity_kind: str
    initial_kind: str
    initial_t0: float
    initial_sigma: float
    initial_center: float
    initial_half_width: float
    reference_kind: str
    reference_sigma: float
    w1_resolution: int
    output_dir: str
    grid_padding: float
    grid_spacing_fraction: float
    grid_node_budget: int


def parse_config(path: str) -> SimConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError([f"cannot read config {path!r}: {exc}"]) from exc


def parse_config_text(text: str) -> SimConfig:
    cp = configparser.ConfigParser(interpolation=None)
    errors: list[str] = []
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"config syntax: {exc}"]) from exc

    for section in cp.sections():
        if section not in _SCHEMA:
            errors.append(f"unknown section [{section}]")
            continue
        for key in cp[section]:
            if key not in _SCHEMA[section]:
                errors.append(f"unknown key {key!r} in section [{section}]")
    if errors:
        raise ConfigError(errors)

    def get(section, key, default=None):
        if cp.has_option(section, key):
            value = cp.get(section, key).strip()
            return value if value else default
        return default

    def as_float(section, key, default=None, low=None, low_strict=True):
        raw = get(section, key)
        if raw is None:
            return default
        try:
            value = float(raw)
        except ValueError:
            errors.append(f"[{section}] {key} = {raw!r} is not a number")
            return default
        if low is not None and (value <= low if low_strict else value < low):
            op = ">" if low_strict else ">="
            errors.append(f"[{section}] {key} must be {op} {low}, got {value}")
        return value

    def as_int(section, key, default=None, low=None):
        raw = get(section, key)
        if raw is None:
            return default
        try:
            value = int(raw)
        except ValueError:
            errors.append(f"[{section}] {key} = {raw!r} is not an integer")
            return default
        if low is not None and value < low:
            errors.append(f"[{section}] {key} must be >= {low}, got {value}")
        return value

    def as_choice(section, key, choices, default=None):
        raw = get(section, key, default)
        if raw is None:
            errors.append(f"[{section}] {key} is required")
            return None
        if raw not in choices:
            errors.append(
                f"[{section}] {key} = {raw!r}; expected one of {', '.join(choices)}"
            )
            return None
        return raw

    family_kind = as_choice("family", "kind", FAMILY_KINDS)
    m = as_float("family", "m")
    dimension = as_int("family", "dimension", default=1, low=1)
    if family_kind in POWER_FAMILIES and m is None:
        errors.append(f"[family] m is required for kind = {family_kind}")
    if family_kind in ("heat", "height_constraint") and m is not None:
        errors.append(f"[family] m is not a parameter of kind = {family_kind}")

    kernel_kind = as_choice("kernel", "kind", KERNEL_KINDS, default="gaussian")
    effective_r = as_float("kernel", "effective_r", low=0.0)
    bump_order = as_int("kernel", "order", default=4, low=3)
    trunc = as_float("kernel", "truncation_radius_multiple", default=8.0, low=0.0)

    raw_eps = get("flow", "epsilon")
    epsilons: tuple[float, ...] = ()
    if raw_eps is None:
        errors.append("[flow] epsilon is required")
    else:
        try:
            epsilons = tuple(float(tok) for tok in raw_eps.replace(",", " ").split())
        except ValueError:
            errors.append(f"[flow] epsilon = {raw_eps!r} is not a number list")
        if epsilons and any(e <= 0.0 for e in epsilons):
            errors.append("[flow] every epsilon must be positive")
        if not epsilons:
            errors.append("[flow] epsilon list is empty")

    beta = as_float("flow", "beta", default=0.5, low=0.0)
    t_final = as_float("flow", "t_final", low=0.0, low_strict=False)
    if t_final is None:
        errors.append("[flow] t_final is required")
    raw_dt = get("flow", "dt", "auto")
    if raw_dt == "auto":
        dt = None
    else:
        dt = as_float("flow", "dt", low=0.0)
        if dt is None and not any("dt" in e for e in errors):
            errors.append(f"[flow] dt = {raw_dt!r}; expected a positive number or auto")
    scheme = as_choice("flow", "scheme", SCHEMES, default="rk4")
    record_every = as_int("flow", "record_every", default=1, low=1)

    n_particles = as_int("particles", "n", low=1)
    if n_particles is None:
        errors.append("[particles] n is required")
    seed = as_int("particles", "seed", default=0, low=0)
    init_mode = as_choice("particles", "init", INIT_MODES, default="quantile")
    init_alpha = as_float("particles", "alpha", default=0.0, low=0.0, low_strict=False)

    velocity_kind = as_choice("velocity", "kind", VELOCITY_KINDS, default="none")

    initial_kind = as_choice("initial", "kind", INITIAL_KINDS, default="gaussian")
    initial_t0 = as_float("initial", "t0", default=0.05, low=0.0)
    initial_sigma = as_float("initial", "sigma", default=1.0, low=0.0)
    initial_center = as_float("initial", "center", default=0.0)
    initial_half_width = as_float("initial", "half_width", default=0.5, low=0.0)

    reference_kind = as_choice("reference", "kind", REFERENCE_KINDS, default="none")
    reference_sigma = as_float("reference", "sigma", default=1.0, low=0.0)
    w1_resolution = as_int("reference", "resolution", default=4096, low=16)

    output_dir = get("output", "directory", "out")

    grid_padding = as_float("grid", "padding", default=6.0, low=0.0)
    grid_spacing_fraction = as_float("grid", "spacing_fraction", default=0.25, low=0.0)
    if grid_spacing_fraction is not None and grid_spacing_fraction > 1.0:
        errors.append("[grid] spacing_fraction must lie in (0, 1]")
    grid_node_budget = as_int("grid", "node_budget", default=20_000_000, low=1000)

    if reference_kind == "self_similar" and initial_kind not in (
        "heat_kernel",
        "barenblatt",
    ):
        errors.append(
            "[reference] kind = self_similar requires [initial] kind heat_kernel "
            "or barenblatt (the reference continues the initial profile in time)"
        )
    if reference_kind == "steady_state" and velocity_kind == "none":
        errors.append(
            "[reference] kind = steady_state requires a confining [velocity]"
        )
    if initial_kind == "barenblatt" and family_kind not in POWER_FAMILIES:
        errors.append(
            "[initial] kind = barenblatt requires a porous_medium or "
            "fast_diffusion family"
        )

    if errors:
        raise ConfigError(errors)

    return SimConfig(
        family_kind=family_kind,
        m=m,
        dimension=dimension,
        kernel_kind=kernel_kind,
        effective_r=effective_r,
        bump_order=bump_order,
        truncation_radius_multiple=trunc,
        epsilons=epsilons,
        beta=beta,
        t_final=t_final,
        dt=dt,
        scheme=scheme,
        record_every=record_every,
        n_particles=n_particles,
        seed=seed,
        init_mode=init_mode,
        init_alpha=init_alpha,
        velocity_kind=velocity_kind,
        initial_kind=initial_kind,
        initial_t0=initial_t0,
        initial_sigma=initial_sigma,
        initial_center=initial_center,
        initial_half_width=initial_half_width,
        reference_kind=reference_kind,
        reference_sigma=reference_sigma,
        w1_resolution=w1_resolution,
        output_dir=output_dir,
        grid_padding=grid_padding,
        grid_spacing_fraction=grid_spacing_fraction,
        grid_node_budget=grid_node_budget,
    )


def serialize_config(cfg: SimConfig) -> str:
    """Canonical text form; parse(serialize(cfg)) == cfg."""

    def num(v):
        return repr(float(v))

    lines = ["[family]", f"kind = {cfg.family_kind}"]
    if cfg.m is not None:
        lines.append(f"m = {num(cfg.m)}")
    lines += [f"dimension = {cfg.dimension}", ""]

    lines += ["[kernel]", f"kind = {cfg.kernel_kind}"]
    if cfg.effective_r is not None:
        lines.append(f"effective_r = {num(cfg.effective_r)}")
    lines += [
        f"order = {cfg.bump_order}",
        f"truncation_radius_multiple = {num(cfg.truncation_radius_multiple)}",
        "",
    ]

    lines += [
        "[flow]",
        f"epsilon = {', '.join(num(e) for e in cfg.epsilons)}",
        f"beta = {num(cfg.beta)}",
        f"t_final = {num(cfg.t_final)}",
        f"dt = {'auto' if cfg.dt is None else num(cfg.dt)}",
        f"scheme = {cfg.scheme}",
        f"record_every = {cfg.record_every}",
        "",
        "[particles]",
        f"n = {cfg.n_particles}",
        f"seed = {cfg.seed}",
        f"init = {cfg.init_mode}",
        f"alpha = {num(cfg.init_alpha)}",
        "",
        "[velocity]",
        f"kind = {cfg.velocity_kind}",
        "",
        "[initial]",
        f"kind = {cfg.initial_kind}",
        f"t0 = {num(cfg.initial_t0)}",
        f"sigma = {num(cfg.initial_sigma)}",
        f"center = {num(cfg.initial_center)}",
        f"half_width = {num(cfg.initial_half_width)}",
        "",
        "[reference]",
        f"kind = {cfg.reference_kind}",
        f"sigma = {num(cfg.reference_sigma)}",
        f"resolution = {cfg.w1_resolution}",
        "",
        "[output]",
        f"directory = {cfg.output_dir}",
        "",
        "[grid]",
        f"padding = {num(cfg.grid_padding)}",
        f"spacing_fraction = {num(cfg.grid_spacing_fraction)}",
        f"node_budget = {cfg.grid_node_budget}",
        "",
    ]
    return "\n".join(lines)


def config_hash(cfg: SimConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()


def _config_echo(cfg: SimConfig) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(serialize_config(cfg))
    return {section: dict(cp[section]) for section in cp.sections()}


# ---------------------------------------------------------------------------
# experiment assembly (heavy imports live here)


def _family(cfg: SimConfig):
    from .convex_energy import EnergyFamily

    d = cfg.dimension
    if cfg.family_kind == "heat":
        return EnergyFamily.heat(dimension_hint=d)
    if cfg.family_kind == "porous_medium":
        return EnergyFamily.porous_medium(cfg.m, dimension_hint=d)
    if cfg.family_kind == "fast_diffusion":
        return EnergyFamily.fast_diffusion(cfg.m, dimension_hint=d)
    return EnergyFamily.height_constraint(dimension_hint=d)


def _kernel(cfg: SimConfig, epsilon: float):
    from .mollifier import MollifierKernel

    if cfg.kernel_kind == "gaussian":
        return MollifierKernel.gaussian(
            epsilon,
            dimension=cfg.dimension,
            truncation_radius_multiple=cfg.truncation_radius_multiple,
            effective_r=cfg.effective_r,
        )
    return MollifierKernel.bump(
        epsilon,
        dimension=cfg.dimension,
        order=cfg.bump_order,
        effective_r=cfg.effective_r,
    )


def _schedule(cfg: SimConfig, kernel):
    from .reference import DeltaSchedule

    r = kernel.effective_r
    d = cfg.dimension
    bound = (r - d) / (r - 1.0)
    try:
        return DeltaSchedule(beta=cfg.beta, effective_r=r, dimension=d)
    except ValueError as exc:
        raise ConfigError(
            [
                f"[flow] beta = {cfg.beta} violates the schedule bound "
                f"(r - d)/(r - 1) = {bound:.6g} with r = {r}, d = {d}: {exc}"
            ]
        ) from exc


def _initial_density(cfg: SimConfig):
    from .reference import (
        barenblatt_reference,
        gaussian_reference,
        heat_kernel_reference,
        uniform_reference,
    )

    d = cfg.dimension
    if cfg.initial_kind == "heat_kernel":
        return heat_kernel_reference(d, cfg.initial_t0)
    if cfg.initial_kind == "barenblatt":
        return barenblatt_reference(cfg.m, d, cfg.initial_t0)
    if cfg.initial_kind == "gaussian":
        return gaussian_reference(d, cfg.initial_sigma, cfg.initial_center)
    return uniform_reference(d, cfg.initial_half_width, cfg.initial_center)


def _velocity(cfg: SimConfig):
    from . import dynamics as dyn

    if cfg.velocity_kind == "none":
        return dyn.VelocityConfig.none()
    return dyn.VelocityConfig.quadratic()


def _reference(cfg: SimConfig, family):
    """Time-indexed comparison target, or None."""
    import numpy as np

    from .reference import (
        barenblatt_reference,
        gaussian_reference,
        heat_kernel_reference,
        steady_state,
    )

    d = cfg.dimension
    if cfg.reference_kind == "none":
        return None
    if cfg.reference_kind == "self_similar":
        t0 = cfg.initial_t0
        if cfg.family_kind == "heat":
            return lambda t: heat_kernel_reference(d, t0 + t)
        return lambda t: barenblatt_reference(cfg.m, d, t0 + t)
    if cfg.reference_kind == "gaussian":
        ref = gaussian_reference(d, cfg.reference_sigma)
        return lambda t: ref
    box = (np.full(d, -8.0), np.full(d, 8.0))
    ss = steady_state(
        family,
        lambda p: 0.5 * np.einsum("ij,ij->i", p, p),
        box,
        resolution=cfg.w1_resolution,
    )
    ref = ss.reference
    return lambda t: ref


def build_runspec(cfg: SimConfig, epsilon: float):
    """Translate a config into a dynamics.RunSpec at the given epsilon;
    validation failures raise ConfigError."""
    from . import dynamics as dyn
    from .convex_energy import RegularizedEnergy
    from .ensemble import prepare_initial_particles

    try:
        family = _family(cfg)
    except ValueError as exc:
        raise ConfigError([f"[family] {exc}"]) from exc
    kernel = _kernel(cfg, epsilon)
    schedule = _schedule(cfg, kernel)
    delta = schedule.delta_of(epsilon)
    reg = RegularizedEnergy(family=family, delta=delta, epsilon=epsilon)
    try:
        target = _initial_density(cfg)
        reference = _reference(cfg, family)
    except ValueError as exc:
        raise ConfigError([f"reference/profile setup: {exc}"]) from exc
    initial = prepare_initial_particles(
        target,
        cfg.n_particles,
        seed=cfg.seed,
        mode=cfg.init_mode,
        alpha=cfg.init_alpha,
    )
    return dyn.RunSpec(
        reg=reg,
        kernel=kernel,
        velocity=_velocity(cfg),
        initial=initial,
        t_final=cfg.t_final,
        dt=cfg.dt,
        scheme=cfg.scheme,
        record_every=cfg.record_every,
        reference=reference,
        grid_padding=cfg.grid_padding,
        grid_spacing_fraction=cfg.grid_spacing_fraction,
        grid_node_budget=cfg.grid_node_budget,
        w1_resolution=cfg.w1_resolution,
    )


# ---------------------------------------------------------------------------
# command bodies


def _say(quiet: bool, message: str) -> None:
    if not quiet:
        print(message)


def _record_dict(rec) -> dict:
    return {
        "t": rec.t,
        "F_eps": rec.f_eps,
        "entropy_moll": rec.entropy_moll,
        "M2": rec.m2,
        "diss_residual": rec.diss_residual,
        "min_cross_term": rec.min_cross_term,
        "lipschitz_estimate": rec.lipschitz_estimate,
        "w1_to_reference": rec.w1_to_reference,
        "exchange_residual": rec.exchange_residual,
    }


def _execute_run(cfg: SimConfig, epsilon: float, out_dir: str, quiet: bool) -> dict:
    """One simulation with streamed diagnostics; returns the summary dict."""
    from . import dynamics as dyn
    from .ensemble import save_snapshot

    os.makedirs(out_dir, exist_ok=True)
    spec = build_runspec(cfg, epsilon)
    save_snapshot(spec.initial, os.path.join(out_dir, "snapshot_initial.csv"))

    started = time.perf_counter()
    diag_path = os.path.join(out_dir, "diagnostics.csv")
    summary = {
        "config_sha256": config_hash(cfg),
        "config": _config_echo(cfg),
        "epsilon": epsilon,
        "delta": _schedule(cfg, _kernel(cfg, epsilon)).delta_of(epsilon),
        "outputs": ["diagnostics.csv", "snapshot_initial.csv"],
    }
    try:
        with open(diag_path, "w", encoding="utf-8", newline="\n") as diag:
            diag.write(dyn.DiagnosticsRecord.CSV_HEADER + "\n")
            diag.flush()

            def on_record(rec, ens):
                diag.write(rec.csv_row() + "\n")
                diag.flush()

            trajectory = dyn.run(spec, on_record=on_record)
    except Exception as exc:
        summary["error"] = f"{type(exc).__name__}: {exc}"
        summary["wall_time_s"] = time.perf_counter() - started
        _write_summary(out_dir, summary)
        raise
    wall = time.perf_counter() - started

    save_snapshot(
        trajectory.ensembles[-1], os.path.join(out_dir, "snapshot_final.csv")
    )
    summary["outputs"] += ["snapshot_final.csv", "summary.json"]
    summary.update(
        {
            "wall_time_s": wall,
            "dt": trajectory.dt,
            "c_eps": trajectory.c_eps,
            "n_records": len(trajectory.records),
            "final": _record_dict(trajectory.records[-1]),
        }
    )
    _write_summary(out_dir, summary)
    final = trajectory.records[-1]
    w1_text = "" if final.w1_to_reference is None else f", W1 {final.w1_to_reference:.5f}"
    _say(
        quiet,
        f"eps={epsilon:g} delta={summary['delta']:.5g}: {len(trajectory.records)} "
        f"records to t={final.t:g}, F {final.f_eps:.6f}{w1_text}, {wall:.1f}s "
        f"-> {out_dir}",
    )
    summary["_trajectory"] = trajectory  # in-process callers only, not serialized
    return summary


def _write_summary(out_dir: str, summary: dict) -> None:
    clean = {k: v for k, v in summary.items() if not k.startswith("_")}
    with open(
        os.path.join(out_dir, "summary.json"), "w", encoding="utf-8", newline="\n"
    ) as fh:
        json.dump(clean, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_run(cfg: SimConfig, out_dir: str, quiet: bool) -> int:
    if len(cfg.epsilons) != 1:
        raise ConfigError(
            [
                f"run takes a single epsilon; got {len(cfg.epsilons)} "
                "(use the converge subcommand for a list)"
            ]
        )
    _execute_run(cfg, cfg.epsilons[0], out_dir, quiet)
    return 0


def cmd_converge(cfg: SimConfig, out_dir: str, quiet: bool) -> int:
    """Repeat the run over a strictly decreasing epsilon list and tabulate
    W1 errors at quarter-points of [0, T]."""
    eps = cfg.epsilons
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError(["converge requires a strictly decreasing epsilon list"])
    if cfg.reference_kind == "none":
        raise ConfigError(["converge requires a [reference] selection"])

    os.makedirs(out_dir, exist_ok=True)
    fractions = (0.25, 0.5, 0.75, 1.0)
    rows = []
    for e in eps:
        sub = os.path.join(out_dir, f"eps_{e:g}")
        summary = _execute_run(cfg, e, sub, quiet)
        trajectory = summary["_trajectory"]
        with_w1 = [r for r in trajectory.records if r.w1_to_reference is not None]
        checkpoints = []
        for frac in fractions:
            t_want = frac * cfg.t_final
            best = min(with_w1, key=lambda r: abs(r.t - t_want))
            checkpoints.append(best.w1_to_reference)
        rows.append(
            {
                "epsilon": e,
                "delta": summary["delta"],
                "w1": checkpoints,
                "runtime_s": summary["wall_time_s"],
            }
        )

    finals = [row["w1"][-1] for row in rows]
    verdict = None
    if len(rows) >= 2:
        verdict = all(b < a for a, b in zip(finals, finals[1:]))

    table_path = os.path.join(out_dir, "convergence.csv")
    with open(table_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            "epsilon,delta,w1_quarter,w1_half,w1_three_quarters,w1_final,runtime_s\n"
        )
        for row in rows:
            cells = [repr(row["epsilon"]), repr(row["delta"])]
            cells += [repr(float(w)) for w in row["w1"]]
            cells.append(repr(row["runtime_s"]))
            fh.write(",".join(cells) + "\n")

    _write_summary(
        out_dir,
        {
            "config_sha256": config_hash(cfg),
            "config": _config_echo(cfg),
            "table": rows,
            "final_w1": finals,
            "strictly_decreasing": verdict,
        },
    )
    if verdict is None:
        _say(quiet, "single epsilon: no convergence verdict")
    else:
        _say(
            quiet,
            f"final W1 over eps {list(eps)}: "
            f"{[round(v, 6) for v in finals]} "
            f"({'strictly decreasing' if verdict else 'NOT strictly decreasing'})",
        )
    return 0


def cmd_sample(cfg: SimConfig, out_dir: str, quiet: bool) -> int:
    """Steady-state sampling demo: confined flow measured against the
    equilibrium profile."""
    if cfg.velocity_kind == "none":
        raise ConfigError(["sample requires [velocity] kind = quadratic"])
    if cfg.reference_kind != "steady_state":
        cfg = replace(cfg, reference_kind="steady_state")
    if len(cfg.epsilons) != 1:
        raise ConfigError(["sample takes a single epsilon"])
    _execute_run(cfg, cfg.epsilons[0], out_dir, quiet)
    return 0


def cmd_selftest(quiet: bool) -> int:
    from . import selftest

    checks = selftest.run_all()
    failed = [c for c in checks if not c[1]]
    if not quiet:
        for name, ok, detail in checks:
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    print(f"selftest: {len(checks) - len(failed)}/{len(checks)} checks passed")
    return 0 if not failed else 1


# ---------------------------------------------------------------------------
# entry point


def _apply_threads(n: int) -> None:
    """Cap numeric thread pools; must run before numpy is first imported."""
    if n <= 0:
        return
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = str(n)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blobflow",
        description="Deterministic particle flows for nonlinear diffusion",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_config in (
        ("run", True),
        ("converge", True),
        ("sample", True),
        ("selftest", False),
    ):
        p = sub.add_parser(name)
        if needs_config:
            p.add_argument("--config", required=True, help="path to an INI config")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument(
            "--threads",
            type=int,
            default=0,
            help="cap numeric thread pools (0 = leave as-is)",
        )
        p.add_argument("--quiet", action="store_true", help="suppress progress text")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    _apply_threads(args.threads)

    if args.command == "selftest":
        return cmd_selftest(args.quiet)

    try:
        cfg = parse_config(args.config)
        out_dir = args.out or os.environ.get(OUT_ENV_VAR) or cfg.output_dir
        if args.command == "run":
            return cmd_run(cfg, out_dir, args.quiet)
        if args.command == "converge":
            return cmd_converge(cfg, out_dir, args.quiet)
        return cmd_sample(cfg, out_dir, args.quiet)
    except ConfigError as exc:
        for message in exc.messages:
            print(f"config error: {message}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure; partial outputs remain on disk
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
