"""Scenario-driven command line front end.

Scenario files are plain text, one ``section.key = value`` per line, ``#``
starts a comment and lists are comma separated::

    domain.bounds = 1.0
    grid.cells = 256
    couplings.a = 0.5
    couplings.c = -1
    time.dt = 0.002
    time.steps = 5000
    time.every = 10
    run.mode = hierarchy        # hierarchy | self-consistent | ode-only | kinetic-init
    run.level = A               # ODE level for ode-only, compare and validate
    init.A.center = 0.5
    init.A.width = 0.12
    init.A.amplitude = 1.0
    init.A.background = 0.2
    init.v.amplitude = 0.1
    init.v.profile = sine       # uniform | sine (vanishes on the walls)
    output.dir = out

Exit codes: 0 success, 1 configuration error, 2 coupling constraint
violation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis, kinetic, odesys
from .aggregates import AggregateSeries, IdentityMonitor, measure
from .espace import RiskGrid
from .hydro import (
    HIERARCHY,
    SELF_CONSISTENT,
    CFLViolation,
    ConstraintViolation,
    CouplingSet,
    HydroState,
    StepConfig,
    StepFailure,
    closure_gap,
    courant_number,
    simulate,
    write_snapshot,
)

EXIT_OK, EXIT_CONFIG, EXIT_CONSTRAINT, EXIT_NUMERIC = 0, 1, 2, 3
RUN_MODES = ("hierarchy", "self-consistent", "ode-only", "kinetic-init")
DENSITY_INITS = ("A", "B")
VELOCITY_INITS = ("v", "u")
PROFILES = ("uniform", "sine")
IDENTITY_BOUND_CONSTANT = 1.0


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = ""):
        where = f"{source}:{line}: " if line is not None else (f"{source}: " if source else "")
        super().__init__(where + message)
        self.line = line


class NumericalFailure(RuntimeError):
    pass


# -- scenario ----------------------------------------------------------------


@dataclass
class BumpInit:
    center: tuple[float, ...] | None = None  # defaults to the domain centre
    width: float = 0.1
    amplitude: float = 1.0
    background: float = 0.0


@dataclass
class VelocityInit:
    amplitude: tuple[float, ...] = (0.0,)
    profile: str = "uniform"


@dataclass
class Scenario:
    bounds: tuple[float, ...] = (1.0,)
    cells: tuple[int, ...] = (128,)
    couplings: CouplingSet = field(default_factory=CouplingSet)
    dt: float = 1e-3
    steps: int = 100
    every: int = 1
    cfl: float = 0.5
    negativity_tol: float = 1e-9
    vacuum_density: float | None = None
    mode: str = "hierarchy"
    level: str = "combined"
    seed: int = 0
    override: bool = False
    bumps: dict[str, BumpInit] = field(default_factory=lambda: {"A": BumpInit(), "B": BumpInit()})
    velocities: dict[str, VelocityInit] = field(default_factory=lambda: {"v": VelocityInit(), "u": VelocityInit()})
    ensemble: Path | None = None
    particles: int = 10000
    totals: tuple[float, ...] = (1.0, 1.0)
    velocity_spread: float = 0.0
    out_dir: Path = Path("out")
    snapshots: int = 0
    source: str = ""

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def grid(self) -> RiskGrid:
        return RiskGrid.uniform(self.bounds, self.cells)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


def parse_scenario(text: str, source: str = "<scenario>", base_dir: Path | None = None) -> Scenario:
    """Parse scenario text; errors carry the offending line number."""
    sc = Scenario(source=source)
    coupling_values: dict[str, float] = {}
    seen: dict[str, int] = {}
    base = base_dir or Path(".")
    names = set(CouplingSet.names())
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or "." not in key:
            raise ScenarioError(f"expected 'section.key = value', got {raw.strip()!r}", lineno, source)
        if key in seen:
            raise ScenarioError(f"duplicate key {key!r} (first set on line {seen[key]})", lineno, source)
        seen[key] = lineno
        section, _, rest = key.partition(".")
        try:
            if section == "domain" and rest == "bounds":
                sc.bounds = _floats(value)
            elif section == "grid" and rest == "cells":
                sc.cells = tuple(_int(p) for p in value.split(","))
            elif section == "couplings" and rest in names:
                coupling_values[rest] = float(value)
            elif section == "time" and rest == "dt":
                sc.dt = float(value)
            elif section == "time" and rest == "steps":
                sc.steps = _int(value)
            elif section == "time" and rest == "every":
                sc.every = _int(value)
            elif section == "time" and rest == "cfl":
                sc.cfl = float(value)
            elif section == "time" and rest == "negativity_tol":
                sc.negativity_tol = float(value)
            elif section == "run" and rest == "mode":
                sc.mode = value
            elif section == "run" and rest == "level":
                sc.level = value
            elif section == "run" and rest == "vacuum_density":
                sc.vacuum_density = float(value)
            elif section == "run" and rest == "seed":
                sc.seed = _int(value)
            elif section == "run" and rest == "override_constraints":
                sc.override = _bool(value)
            elif section == "init" and rest == "ensemble":
                sc.ensemble = base / value
            elif section == "init" and rest.count(".") == 1:
                _parse_init(sc, *rest.split("."), value)
            elif section == "kinetic" and rest == "particles":
                sc.particles = _int(value)
            elif section == "kinetic" and rest == "totals":
                sc.totals = _floats(value)
            elif section == "kinetic" and rest == "velocity_spread":
                sc.velocity_spread = float(value)
            elif section == "output" and rest == "dir":
                sc.out_dir = Path(value)
            elif section == "output" and rest == "snapshots":
                sc.snapshots = _int(value)
            else:
                raise ScenarioError(f"unknown key {key!r}", lineno, source)
        except ScenarioError:
            raise
        except ValueError as exc:
            raise ScenarioError(f"bad value for {key!r}: {exc}", lineno, source) from None
    sc.couplings = CouplingSet.from_mapping(coupling_values)
    check_scenario(sc)
    return sc


def _parse_init(sc: Scenario, name: str, attr: str, value: str) -> None:
    if name in DENSITY_INITS:
        bump = sc.bumps[name]
        if attr == "center":
            bump.center = _floats(value)
        elif attr in ("width", "amplitude", "background"):
            setattr(bump, attr, float(value))
        else:
            raise ValueError(f"init.{name} has no attribute {attr!r}")
    elif name in VELOCITY_INITS:
        vel = sc.velocities[name]
        if attr == "amplitude":
            vel.amplitude = _floats(value)
        elif attr == "profile":
            vel.profile = value
        else:
            raise ValueError(f"init.{name} has no attribute {attr!r}")
    else:
        raise ValueError(f"unknown initial field {name!r}")


def check_scenario(sc: Scenario) -> None:
    """Consistency rules that do not need a simulation."""
    src = sc.source
    if sc.mode not in RUN_MODES:
        raise ScenarioError(f"run.mode must be one of {RUN_MODES}, got {sc.mode!r}", source=src)
    if sc.level not in odesys.LEVELS:
        raise ScenarioError(f"run.level must be one of {odesys.LEVELS}, got {sc.level!r}", source=src)
    if not sc.bounds or any(not (b > 0 and math.isfinite(b)) for b in sc.bounds):
        raise ScenarioError(f"domain.bounds must be positive, got {sc.bounds}", source=src)
    if len(sc.cells) == 1 and sc.dim > 1:
        sc.cells = sc.cells * sc.dim
    if len(sc.cells) != sc.dim or any(c < 1 for c in sc.cells):
        raise ScenarioError(f"grid.cells needs {sc.dim} positive counts, got {sc.cells}", source=src)
    if not sc.dt > 0 or sc.steps < 1 or sc.every < 1:
        raise ScenarioError("need time.dt > 0, time.steps >= 1, time.every >= 1", source=src)
    if sc.steps % sc.every:
        raise ScenarioError(f"time.steps ({sc.steps}) must be a multiple of time.every ({sc.every})", source=src)
    if sc.vacuum_density is not None and not sc.vacuum_density > 0:
        raise ScenarioError("run.vacuum_density must be positive", source=src)
    if not sc.negativity_tol >= 0:
        raise ScenarioError("time.negativity_tol must be non-negative", source=src)
    if not 0 < sc.cfl <= 1:
        raise ScenarioError(f"time.cfl must lie in (0, 1], got {sc.cfl}", source=src)
    for name, bump in sc.bumps.items():
        if bump.center is not None and len(bump.center) != sc.dim:
            raise ScenarioError(f"init.{name}.center needs {sc.dim} coordinates", source=src)
        if bump.width <= 0 or bump.amplitude < 0 or bump.background < 0:
            raise ScenarioError(f"init.{name}: width must be positive, amplitude and background non-negative", source=src)
    for name, vel in sc.velocities.items():
        if vel.profile not in PROFILES:
            raise ScenarioError(f"init.{name}.profile must be one of {PROFILES}", source=src)
        if len(vel.amplitude) == 1 and sc.dim > 1:
            vel.amplitude = vel.amplitude * sc.dim
        if len(vel.amplitude) != sc.dim:
            raise ScenarioError(f"init.{name}.amplitude needs {sc.dim} components", source=src)
    if sc.mode == "kinetic-init":
        if sc.ensemble is not None and not sc.ensemble.is_file():
            raise ScenarioError(f"ensemble file {sc.ensemble} does not exist", source=src)
        if sc.ensemble is None and sc.particles < 1:
            raise ScenarioError("kinetic.particles must be positive", source=src)
    if sc.snapshots < 0:
        raise ScenarioError("output.snapshots must be non-negative", source=src)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", source=str(path)) from None
    return parse_scenario(text, str(path), path.parent)


# -- initial data ------------------------------------------------------------


def initial_fields(sc: Scenario, grid: RiskGrid) -> dict[str, np.ndarray]:
    """Gaussian bumps plus background for the densities, profiled velocities."""
    x = grid.coords
    upper = np.asarray(sc.bounds).reshape((-1,) + (1,) * grid.dim)
    out = {}
    for name, bump in sc.bumps.items():
        c = np.asarray(bump.center if bump.center is not None else 0.5 * np.asarray(sc.bounds))
        r2 = np.sum((x - c.reshape(upper.shape)) ** 2, axis=0)
        out[name] = bump.background + bump.amplitude * np.exp(-0.5 * r2 / bump.width**2)
    for name, vel in sc.velocities.items():
        amp = np.asarray(vel.amplitude).reshape(upper.shape)
        if vel.profile == "sine":
            shape = np.prod(np.sin(np.pi * x / upper), axis=0)
        else:
            shape = np.ones(grid.shape)
        out[name] = amp * shape
    return out


def initial_state(sc: Scenario, grid: RiskGrid, mode: str = HIERARCHY) -> tuple[HydroState, kinetic.Ensemble | None]:
    if sc.mode == "kinetic-init":
        ens = initial_ensemble(sc, grid)
        A, PA = kinetic.deposit(ens, grid, 0)
        if ens.variables.shape[1] > 1:
            B, PB = kinetic.deposit(ens, grid, 1)
        else:
            B, PB = np.zeros_like(A), np.zeros_like(PA)
        return HydroState.from_primary(grid, A, PA, B, PB, mode=mode), ens
    f = initial_fields(sc, grid)
    return HydroState.from_primary(grid, f["A"], f["A"] * f["v"], f["B"], f["B"] * f["u"], mode=mode), None


def initial_ensemble(sc: Scenario, grid: RiskGrid) -> kinetic.Ensemble:
    if sc.ensemble is not None:
        ens = kinetic.load_ensemble(sc.ensemble, dim=grid.dim)
        if ens.dim != grid.dim:
            raise ScenarioError(f"ensemble has dim {ens.dim}, domain has {grid.dim}", source=sc.source)
        return ens
    rng = np.random.default_rng(sc.seed)
    bump = sc.bumps["A"]
    center = bump.center if bump.center is not None else 0.5 * np.asarray(sc.bounds)
    return kinetic.sample_ensemble(
        rng, grid, sc.particles, center, bump.width, sc.velocities["v"].amplitude, sc.totals, sc.velocity_spread
    )


# -- pipelines ---------------------------------------------------------------


@dataclass
class RunResult:
    series: AggregateSeries
    summary: str
    exit_code: int = EXIT_OK


def _step_config(sc: Scenario, mode: str) -> StepConfig:
    return StepConfig(sc.dt, cfl_limit=sc.cfl, mode=mode, epsilon=sc.vacuum_density, negativity_tol=sc.negativity_tol)


def _hydro_mode(sc: Scenario) -> str:
    return SELF_CONSISTENT if sc.mode == "self-consistent" else HIERARCHY


def run_fields(
    sc: Scenario, grid: RiskGrid | None = None, out: Path | None = None, write: bool = True, state: HydroState | None = None
) -> RunResult:
    """Field simulation (hierarchy, self-consistent or kinetic-init)."""
    grid = grid or sc.grid()
    mode = _hydro_mode(sc)
    ens = None
    if state is None:
        state, ens = initial_state(sc, grid, HIERARCHY)
    if ens is not None and out is not None and write:
        kinetic.save_ensemble(ens, out / "ensemble.txt")
    cfg = _step_config(sc, mode)
    monitor = IdentityMonitor(sc.couplings)
    series = AggregateSeries(dim=grid.dim)
    gaps = []
    t0 = time.perf_counter()
    last = state
    for k, s in enumerate(simulate(state, sc.couplings, cfg, sc.steps, every=sc.every)):
        series.append(measure(s))
        monitor.push(s)
        if mode == HIERARCHY:
            gaps.append(closure_gap(s))
        if write and out is not None and sc.snapshots and k % sc.snapshots == 0:
            write_snapshot(s, out / f"snapshot_{k:06d}.txt")
        last = s
    elapsed = time.perf_counter() - t0
    if write and out is not None and sc.snapshots:
        write_snapshot(last, out / "snapshot_final.txt")

    lines = _header(sc, grid, elapsed)
    lines += ["", "== aggregate identities (forward difference vs right-hand side)"]
    dx = max(grid.spacing)
    dts = sc.dt * sc.every
    bound = IDENTITY_BOUND_CONSTANT * (dx + dts)
    lines.append(f"bound C*(dx + dt_sample) = {IDENTITY_BOUND_CONSTANT:g}*({dx:.4g} + {dts:.4g}) = {bound:.4g}")
    for name, res in monitor.result().items():
        lines.append(f"{name:<8} {res.residual:.4e}  {'ok' if res.residual <= bound else 'ABOVE BOUND'}")
    if gaps:
        lines += ["", "== closure gap  integral |EA - A|v|^2|", f"t={series.t[0]:.6g}: {gaps[0]:.6e}", f"t={series.t[-1]:.6g}: {gaps[-1]:.6e}"]
    lines += _final_aggregates(series)
    return RunResult(series, "\n".join(lines) + "\n")


def _ode_substeps(system: odesys.LinearSystem, dt: float) -> int:
    rho = system.spectral_radius()
    sub = max(1, math.ceil(dt * rho / 0.1)) if rho > 0 else 1
    while dt / sub * rho > 0.1:  # ceil can land exactly on the limit
        sub += 1
    return sub


def run_ode(sc: Scenario, grid: RiskGrid | None = None, state: HydroState | None = None) -> RunResult:
    """ODE pipeline started from the aggregates of the initial fields."""
    grid = grid or sc.grid()
    system = odesys.build(sc.couplings, sc.level, dim=grid.dim, override=sc.override)
    if state is None:
        state, _ = initial_state(sc, grid, HIERARCHY)
    y0 = odesys.initial_aggregates(measure(state), sc.level, grid.dim)
    sub = _ode_substeps(system, sc.dt)
    t0 = time.perf_counter()
    traj = odesys.integrate_ode(system, y0, sc.dt / sub, sc.steps * sub, every=sc.every * sub)
    elapsed = time.perf_counter() - t0
    series = AggregateSeries(odesys.trajectory_records(traj, sc.level, grid.dim), dim=grid.dim)

    lines = _header(sc, grid, elapsed)
    lines.append(f"ode level {sc.level}, {system.size} states, {sub} substep(s) per dt")
    lines += ["", "== modes", analysis.mode_table(odesys.modes(system, sc.couplings).theoretical, {})]
    k = sc.couplings
    if not traj.truncated and not (math.isnan(k.omega) or math.isnan(k.gamma_e)) and k.omega > 0 and k.gamma_e > 0 and len(traj.t) >= 10:
        fit = analysis.fit_modes(traj.t, traj["A"], [k.omega], [k.gamma_e])
        lines += ["", "== fit of A onto {1, cos wt, sin wt, exp(+-g t)}", fit.describe()]
    code = EXIT_OK
    if traj.truncated:
        lines += ["", f"NUMERICAL FAILURE: {traj.report}"]
        code = EXIT_NUMERIC
    lines += _final_aggregates(series)
    return RunResult(series, "\n".join(lines) + "\n", code)


def _header(sc: Scenario, grid: RiskGrid, elapsed: float) -> list[str]:
    lines = [
        f"scenario {sc.source or '-'}",
        f"mode {sc.mode}, grid {'x'.join(map(str, grid.cells))} on {sc.bounds}, dt {sc.dt:g}, steps {sc.steps}, every {sc.every}, seed {sc.seed}",
        f"wall time {elapsed:.3f} s",
        "",
        "== couplings",
        ", ".join(f"{n}={v:g}" for n, v in sc.couplings.as_dict().items()),
        "",
        f"== constraints (level {sc.level})",
    ]
    report = odesys.ConstraintReport(_level_constraints(sc.couplings, sc.level))
    lines.append(report.text().rstrip())
    return lines


def _level_constraints(k: CouplingSet, level: str):
    keys = odesys.LEVEL_CONSTRAINTS[level]
    return [c for c in k.constraints() if keys is None or c.key in keys]


def _final_aggregates(series: AggregateSeries) -> list[str]:
    last = series[len(series) - 1]
    lines = ["", f"== final aggregates (t={last.t:.6g})"]
    for name in ("A", "B", "XPA", "YPB", "EA", "EB", "X", "sigma2"):
        v = last[name]
        if v is not None:
            lines.append(f"{name:<8} {np.array2string(np.asarray(v), precision=10)}")
    return lines


def compare(sc: Scenario) -> str:
    """Field run against the ODE run, at the scenario grid and one refinement."""
    grids = [sc.grid(), sc.grid().refined(2)]
    system = odesys.build(sc.couplings, sc.level, dim=grids[0].dim, override=sc.override)
    rows: dict[str, list[float]] = {}
    gap_lines = []
    for g in grids:
        state, _ = initial_state(sc, g, HIERARCHY)
        field_run = run_fields(replace(sc, mode="hierarchy"), g, write=False, state=state)
        ode_run = run_ode(sc, g, state=state)
        for label in system.labels:
            name, comp = _split_label(label)
            h = field_run.series.column(name, comp)
            o = ode_run.series.column(name, comp)
            scale = float(np.max(np.abs(o)))
            dev = float(np.max(np.abs(h - o)))
            rows.setdefault(label, []).append(dev / scale if scale > 0 else dev)
        if sc.mode == "self-consistent":
            gaps = [closure_gap(s) for s in simulate(state, sc.couplings, _step_config(sc, HIERARCHY), sc.steps, every=sc.every)]
            gap_lines.append(f"cells {g.cells}: closure gap t=0 {gaps[0]:.6e}, final {gaps[-1]:.6e}, max {max(gaps):.6e}")
    lines = [
        f"scenario {sc.source or '-'}: field simulation vs ODE level {sc.level}",
        f"{'aggregate':<10}{'dev@' + str(grids[0].cells[0]):>14}{'dev@' + str(grids[1].cells[0]):>14}{'ratio':>10}",
    ]
    for label, (d1, d2) in rows.items():
        ratio = d1 / d2 if d2 > 0 else (1.0 if d1 == 0 else math.inf)
        lines.append(f"{label:<10}{d1:>14.6e}{d2:>14.6e}{ratio:>10.4g}")
    if gap_lines:
        lines += ["", "== closure gap of the hierarchy run", *gap_lines]
    return "\n".join(lines) + "\n"


def _split_label(label: str) -> tuple[str, int | None]:
    name, sep, comp = label.rpartition("_")
    if sep and comp.isdigit():
        return name, int(comp) - 1
    return label, None


def validate(sc: Scenario) -> tuple[str, int]:
    """Constraint report for the scenario's level plus scenario linting."""
    checks = _level_constraints(sc.couplings, sc.level)
    report = odesys.ConstraintReport(checks)
    lines = [f"scenario {sc.source or '-'} (level {sc.level})", report.text().rstrip()]
    lint = []
    if sc.mode != "ode-only":
        state, _ = initial_state(sc, sc.grid(), HIERARCHY)
        cn = courant_number(state, sc.dt)
        if cn > sc.cfl:
            lint.append(f"initial Courant number {cn:.4g} exceeds time.cfl {sc.cfl:g}")
    if lint:
        lines += ["lint:"] + [f"  {msg}" for msg in lint]
    code = EXIT_OK if report.ok else EXIT_CONSTRAINT
    if report.ok and lint:
        code = EXIT_CONFIG
    return "\n".join(lines) + "\n", code


def analyze_csv(path: Path, columns: Sequence[str], frequencies: Sequence[float], rates: Sequence[float], couplings: CouplingSet | None) -> str:
    series = AggregateSeries.from_csv(path)
    t = series.t
    dt = series.sample_interval()
    fits, spectra, measured = {}, {}, {}
    for name in columns:
        y = series.column(name)
        if y.ndim > 1:
            y = y[:, 0]
        if frequencies or rates:
            fits[name] = analysis.fit_modes(t, y, frequencies, rates)
        if len(y) >= 64:
            spectra[name] = analysis.spectrum(y, dt)
    if "A" in spectra and len(spectra["A"].peaks):
        measured["omega"] = 2 * math.pi * spectra["A"].dominant
    try:
        measured["gamma_e"] = analysis.growth_rate(series.column("EA"), t)
    except (ValueError, KeyError):
        pass
    theory = None
    if couplings is not None:
        theory = {"omega": couplings.omega, "gamma_e": couplings.gamma_e}
    return analysis.analysis_report(fits, theory, measured, spectra)


# -- entry point -------------------------------------------------------------


def _apply_overrides(sc: Scenario, args) -> Scenario:
    if getattr(args, "mode", None):
        sc.mode = args.mode
    if getattr(args, "seed", None) is not None:
        sc.seed = args.seed
    if getattr(args, "cells", None):
        sc.cells = tuple(int(c) for c in args.cells.split(","))
    if getattr(args, "out", None):
        sc.out_dir = Path(args.out)
    check_scenario(sc)
    return sc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ehydro", description="Risk-space hydrodynamics of assets and revenue.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=True):
        sp.add_argument("--scenario", required=scenario_required, help="scenario file")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--mode", choices=RUN_MODES, help="override run.mode")
        sp.add_argument("--seed", type=int, help="override run.seed")
        sp.add_argument("--cells", help="override grid.cells (comma separated)")

    common(sub.add_parser("run", help="run the scenario pipeline"))
    common(sub.add_parser("validate", help="check coupling constraints and lint the scenario"))
    common(sub.add_parser("compare", help="field simulation vs ODE, with one grid refinement"))
    an = sub.add_parser("analyze", help="spectral and modal analysis of an aggregates CSV")
    common(an, scenario_required=False)
    an.add_argument("csv", help="aggregates CSV written by 'run'")
    an.add_argument("--columns", default="A,B,EA", help="columns to analyse")
    an.add_argument("--frequencies", default="", help="angular frequencies for the basis fit")
    an.add_argument("--rates", default="", help="growth rates for the basis fit (both signs used)")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConstraintViolation as exc:
        print(f"constraint violation: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except (CFLViolation, StepFailure, NumericalFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def _dispatch(args) -> int:
    if args.command == "analyze":
        couplings = None
        if args.scenario:
            couplings = load_scenario(args.scenario).couplings
        try:
            text = analyze_csv(
                Path(args.csv),
                [c.strip() for c in args.columns.split(",") if c.strip()],
                _floats(args.frequencies),
                _floats(args.rates),
                couplings,
            )
        except (OSError, KeyError, ValueError) as exc:
            raise ScenarioError(str(exc).strip("'\""), source=args.csv) from None
        _emit(text, Path(args.out) / "analysis.txt" if args.out else None)
        return EXIT_OK

    sc = _apply_overrides(load_scenario(args.scenario), args)
    if args.command == "validate":
        text, code = validate(sc)
        print(text, end="")
        return code
    out = sc.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "compare":
        _emit(compare(sc), out / "compare.txt")
        return EXIT_OK
    if sc.mode == "ode-only":
        result = run_ode(sc)
        (out / "system.txt").write_text(odesys.build(sc.couplings, sc.level, sc.dim, override=True).dump())
    else:
        result = run_fields(sc, out=out)
    result.series.to_csv(out / "aggregates.csv")
    (out / "summary.txt").write_text(result.summary)
    print(result.summary, end="")
    return result.exit_code


def _emit(text: str, path: Path | None) -> None:
    print(text, end="")
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


if __name__ == "__main__":
    raise SystemExit(main())
