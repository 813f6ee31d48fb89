"""Coupled continuity / motion / closure equations on the risk grid.

Every field obeys

    ∂F/∂t + ∇·(w F) = source(F)

with ``w = v = PA/A`` for the assets-side fields and ``w = u = PB/B`` for the
revenue-side fields.  Sources are local and linear in the conjugate field:

    A ← a x·PB        B ← b x·PA
    PA ← c PB         PB ← d PA
    EA ← c_e EB       EB ← d_e EA
    PEA ← c_pe PEB    PEB ← d_pe PEA
    VXPA ← c_v UYPB   UYPB ← d_v VXPA
    V4A ← c_vu U4B    U4B ← d_vu V4A
    XVA ← c_xv YUB    YUB ← d_xv XVA

In ``hierarchy`` mode the closure fields (energies, energy impulses, fourth
order and quadratic flux fields) are evolved by these equations.  In
``self-consistent`` mode only ``A, B, PA, PB`` are evolved and the closure
quantities are derived from them on demand (see :func:`closure_fields`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields as dc_fields, replace
from typing import Iterator, Mapping

import numpy as np

from .espace import FloatArray, RiskGrid
from .kinetic import default_epsilon

HIERARCHY = "hierarchy"
SELF_CONSISTENT = "self-consistent"
MODES = (HIERARCHY, SELF_CONSISTENT)

# name -> (rank, side); side 0 is advected by v, side 1 by u.
FIELD_SPECS: dict[str, tuple[int, int]] = {
    "A": (0, 0),
    "PA": (1, 0),
    "EA": (0, 0),
    "PEA": (1, 0),
    "VXPA": (1, 0),
    "V4A": (0, 0),
    "XVA": (0, 0),
    "B": (0, 1),
    "PB": (1, 1),
    "EB": (0, 1),
    "PEB": (1, 1),
    "UYPB": (1, 1),
    "U4B": (0, 1),
    "YUB": (0, 1),
}
PRIMARY_FIELDS = ("A", "PA", "B", "PB")
CLOSURE_FIELDS = ("EA", "PEA", "VXPA", "V4A", "XVA", "EB", "PEB", "UYPB", "U4B", "YUB")
DENSITY_FIELDS = ("A", "B", "EA", "EB", "V4A", "U4B", "XVA", "YUB")

# target <- coupling * partner, for every field except A and B
PARTNERS: dict[str, tuple[str, str]] = {
    "PA": ("c", "PB"),
    "PB": ("d", "PA"),
    "EA": ("c_e", "EB"),
    "EB": ("d_e", "EA"),
    "PEA": ("c_pe", "PEB"),
    "PEB": ("d_pe", "PEA"),
    "VXPA": ("c_v", "UYPB"),
    "UYPB": ("d_v", "VXPA"),
    "V4A": ("c_vu", "U4B"),
    "U4B": ("d_vu", "V4A"),
    "XVA": ("c_xv", "YUB"),
    "YUB": ("d_xv", "XVA"),
}


class CFLViolation(ValueError):
    def __init__(self, dt: float, dt_max: float, courant: float, limit: float):
        self.dt, self.dt_max, self.courant, self.limit = dt, dt_max, courant, limit
        super().__init__(
            f"dt={dt:.6g} gives Courant number {courant:.4g} > limit {limit:.4g}; "
            f"largest admissible dt is {dt_max:.6g}"
        )


class StepFailure(RuntimeError):
    pass


class ConstraintViolation(ValueError):
    def __init__(self, failed: list[Constraint]):
        self.failed = failed
        names = "; ".join(f"{c.label} (got {c.detail})" for c in failed)
        super().__init__(f"coupling constraints violated: {names}")


@dataclass(frozen=True)
class Constraint:
    key: str
    label: str
    passed: bool
    value: float
    detail: str


@dataclass(frozen=True)
class CouplingSet:
    """Model constants.  Zero by default, which violates the sign rules."""

    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    c_e: float = 0.0
    d_e: float = 0.0
    c_pe: float = 0.0
    d_pe: float = 0.0
    c_v: float = 0.0
    d_v: float = 0.0
    c_vu: float = 0.0
    d_vu: float = 0.0
    c_xv: float = 0.0
    d_xv: float = 0.0

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dc_fields(cls))

    @classmethod
    def from_mapping(cls, values: Mapping[str, float]) -> CouplingSet:
        unknown = set(values) - set(cls.names())
        if unknown:
            raise ValueError(f"unknown coupling constant(s): {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in values.items()})

    def as_dict(self) -> dict[str, float]:
        return {n: getattr(self, n) for n in self.names()}

    def scaled(self, **changes: float) -> CouplingSet:
        return replace(self, **changes)

    # -- mode set ------------------------------------------------------------
    # Each is nan when its sign rule fails.

    @property
    def omega(self) -> float:
        return _root(-self.c * self.d)

    @property
    def gamma_e(self) -> float:
        return _root(self.c_e * self.d_e)

    @property
    def omega_pe(self) -> float:
        return _root(-self.c_pe * self.d_pe)

    @property
    def omega_v(self) -> float:
        return _root(-self.c_v * self.d_v)

    @property
    def gamma_vu(self) -> float:
        return _root(self.c_vu * self.d_vu)

    @property
    def gamma_xv(self) -> float:
        return _root(self.c_xv * self.d_xv)

    def constraints(self) -> list[Constraint]:
        """Evaluate every sign rule and the two growth-ordering rules."""
        out = []
        for key, label, value in (
            ("omega", "ω² = −cd > 0", -self.c * self.d),
            ("gamma_e", "γ_e² = c_e d_e > 0", self.c_e * self.d_e),
            ("omega_pe", "ω_pe² = −c_pe d_pe > 0", -self.c_pe * self.d_pe),
            ("omega_v", "ω_v² = −c_v d_v > 0", -self.c_v * self.d_v),
            ("gamma_vu", "γ_vu² = c_vu d_vu > 0", self.c_vu * self.d_vu),
            ("gamma_xv", "γ_xv² = c_xv d_xv > 0", self.c_xv * self.d_xv),
        ):
            value += 0.0  # normalize -0.0
            out.append(Constraint(key, label, value > 0.0, value, f"{value:.6g}"))
        ge = self.gamma_e
        for key, label, other in (
            ("gamma_e>gamma_vu", "γ_e > γ_vu", self.gamma_vu),
            ("gamma_e>gamma_xv", "γ_e > γ_xv", self.gamma_xv),
        ):
            ok = bool(ge > other)  # nan compares False
            out.append(Constraint(key, label, ok, ge - other, f"γ_e={ge:.6g}, other={other:.6g}"))
        return out

    def violations(self, keys: tuple[str, ...] | None = None) -> list[Constraint]:
        return [c for c in self.constraints() if not c.passed and (keys is None or c.key in keys)]

    def require(self, keys: tuple[str, ...] | None = None) -> None:
        failed = self.violations(keys)
        if failed:
            raise ConstraintViolation(failed)


def _root(x: float) -> float:
    return math.sqrt(x) if x > 0.0 else math.nan


@dataclass
class StepConfig:
    dt: float
    cfl_limit: float = 0.5
    mode: str = HIERARCHY
    epsilon: float | None = None
    negativity_tol: float | None = 1e-9

    def __post_init__(self) -> None:
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not 0.0 < self.cfl_limit <= 1.0:
            raise ValueError(f"cfl_limit must lie in (0, 1], got {self.cfl_limit}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class HydroState:
    """All fields of one simulation at one instant.

    Scalar fields have shape ``grid.shape``; vector fields ``(dim, *shape)``.
    """

    grid: RiskGrid
    time: float
    fields: dict[str, FloatArray]
    mode: str = HIERARCHY
    epsilon: float | None = field(default=None, kw_only=True)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        needed = PRIMARY_FIELDS + (CLOSURE_FIELDS if self.mode == HIERARCHY else ())
        missing = [n for n in needed if n not in self.fields]
        if missing:
            raise ValueError(f"{self.mode} state lacks field(s) {missing}")
        for name, values in self.fields.items():
            rank, _ = FIELD_SPECS[name]
            shape = self.grid.shape if rank == 0 else (self.grid.dim, *self.grid.shape)
            if np.shape(values) != shape:
                raise ValueError(f"field {name}: shape {np.shape(values)} != {shape}")

    @classmethod
    def from_primary(
        cls,
        grid: RiskGrid,
        A: FloatArray,
        PA: FloatArray,
        B: FloatArray,
        PB: FloatArray,
        mode: str = HIERARCHY,
        time: float = 0.0,
        epsilon: float | None = None,
    ) -> HydroState:
        """Build a state; in hierarchy mode closures start self-consistent."""
        base = {
            "A": np.asarray(A, float),
            "PA": np.asarray(PA, float),
            "B": np.asarray(B, float),
            "PB": np.asarray(PB, float),
        }
        probe = cls(grid, time, base, SELF_CONSISTENT, epsilon=epsilon)
        if mode == HIERARCHY:
            base.update(closure_fields(probe))
        return cls(grid, time, base, mode, epsilon=epsilon)

    def __getitem__(self, name: str) -> FloatArray:
        return self.fields[name]

    @property
    def A(self) -> FloatArray:
        return self.fields["A"]

    @property
    def B(self) -> FloatArray:
        return self.fields["B"]

    @property
    def PA(self) -> FloatArray:
        return self.fields["PA"]

    @property
    def PB(self) -> FloatArray:
        return self.fields["PB"]

    def velocities(self) -> tuple[FloatArray, FloatArray]:
        """Assets velocity v and revenue velocity u."""
        return (
            hydro_velocity(self.A, self.PA, self.epsilon),
            hydro_velocity(self.B, self.PB, self.epsilon),
        )

    def copy(self) -> HydroState:
        return HydroState(
            self.grid, self.time, {k: v.copy() for k, v in self.fields.items()}, self.mode, epsilon=self.epsilon
        )


def hydro_velocity(density: FloatArray, impulse: FloatArray, epsilon: float | None = None) -> FloatArray:
    """``impulse / max(density, eps)``, zero wherever density is below eps."""
    eps = default_epsilon(density) if epsilon is None else epsilon
    v = impulse / np.maximum(density, eps)
    v[:, density < eps] = 0.0
    return v


def closure_fields(state: HydroState) -> dict[str, FloatArray]:
    """Closure quantities computed algebraically from A, B, PA, PB."""
    x = state.grid.coords
    v, u = state.velocities()
    out: dict[str, FloatArray] = {}
    for rho, P, w, names in (
        (state.A, state.PA, v, ("EA", "PEA", "VXPA", "V4A", "XVA")),
        (state.B, state.PB, u, ("EB", "PEB", "UYPB", "U4B", "YUB")),
    ):
        w2 = np.sum(w * w, axis=0)
        energy = rho * w2
        out[names[0]] = energy
        out[names[1]] = w * energy
        out[names[2]] = w * np.sum(x * P, axis=0)
        out[names[3]] = rho * w2 * w2
        out[names[4]] = np.sum(x * w, axis=0) ** 2 * rho
    return out


def source_terms(state: HydroState, couplings: CouplingSet) -> dict[str, FloatArray]:
    """Local source of every evolved field of ``state``."""
    x = state.grid.coords
    f = state.fields
    k = couplings
    out = {
        "A": k.a * np.sum(x * f["PB"], axis=0),
        "B": k.b * np.sum(x * f["PA"], axis=0),
    }
    for name in f:
        if name in PARTNERS:
            coef, partner = PARTNERS[name]
            if partner in f:
                out[name] = getattr(k, coef) * f[partner]
            else:
                out[name] = np.zeros_like(f[name])
    return out


def advect(values: FloatArray, velocity: FloatArray, grid: RiskGrid) -> FloatArray:
    """Transport tendency ``-∇·(v f)`` with first-order upwind face fluxes.

    ``values`` may be a scalar field, a vector field (each component is
    carried by ``velocity``) or any stack with extra leading axes.
    """
    return -grid.flux_divergence(grid.upwind_fluxes(np.asarray(values, float), velocity))


def courant_number(state: HydroState, dt: float) -> float:
    v, u = state.velocities()
    speed = max(float(np.sqrt(np.sum(v * v, axis=0)).max()), float(np.sqrt(np.sum(u * u, axis=0)).max()))
    return dt * speed / min(state.grid.spacing)


class _Layout:
    """Row layout of the stacked field array used inside the stepper.

    Assets-side rows come first so each side is one contiguous block.
    """

    def __init__(self, grid: RiskGrid, names: tuple[str, ...], couplings: CouplingSet):
        self.grid = grid
        n = grid.dim
        order = [nm for nm in FIELD_SPECS if nm in names and FIELD_SPECS[nm][1] == 0]
        order += [nm for nm in FIELD_SPECS if nm in names and FIELD_SPECS[nm][1] == 1]
        self.names = tuple(order)
        self.slices: dict[str, slice] = {}
        row = 0
        for nm in self.names:
            width = n if FIELD_SPECS[nm][0] == 1 else 1
            self.slices[nm] = slice(row, row + width)
            row += width
        self.rows = row
        self.split = sum(s.stop - s.start for nm, s in self.slices.items() if FIELD_SPECS[nm][1] == 0)
        partner = np.arange(self.rows)
        coef = np.zeros(self.rows)
        for nm in self.names:
            if nm in PARTNERS:
                cname, other = PARTNERS[nm]
                if other in self.slices:
                    partner[self.slices[nm]] = np.arange(self.slices[other].start, self.slices[other].stop)
                    coef[self.slices[nm]] = getattr(couplings, cname)
        self.partner = partner
        self.coef = coef.reshape((-1,) + (1,) * n)
        self.a, self.b = couplings.a, couplings.b
        self.density_rows = [self.slices[nm].start for nm in self.names if nm in DENSITY_FIELDS]

    def pack(self, state: HydroState) -> FloatArray:
        parts = []
        for nm in self.names:
            arr = state.fields[nm]
            parts.append(arr[None] if FIELD_SPECS[nm][0] == 0 else arr)
        return np.concatenate(parts, axis=0)

    def unpack(self, stack: FloatArray) -> dict[str, FloatArray]:
        out = {}
        for nm in self.names:
            block = stack[self.slices[nm]]
            out[nm] = block[0] if FIELD_SPECS[nm][0] == 0 else block
        return out


class _Stepper:
    def __init__(self, grid: RiskGrid, names: tuple[str, ...], couplings: CouplingSet, cfg: StepConfig, epsilon):
        self.grid = grid
        self.layout = _Layout(grid, names, couplings)
        self.cfg = cfg
        self.epsilon = epsilon
        L = self.layout
        self.iA, self.iB = L.slices["A"].start, L.slices["B"].start
        self.sPA, self.sPB = L.slices["PA"], L.slices["PB"]
        self.x = grid.coords

    def velocities(self, stack: FloatArray) -> tuple[FloatArray, FloatArray]:
        return (
            hydro_velocity(stack[self.iA], stack[self.sPA], self.epsilon),
            hydro_velocity(stack[self.iB], stack[self.sPB], self.epsilon),
        )

    def tendency(self, stack: FloatArray, vel: tuple[FloatArray, FloatArray] | None = None) -> FloatArray:
        L = self.layout
        g = self.grid
        v, u = self.velocities(stack) if vel is None else vel
        out = np.empty_like(stack)
        out[: L.split] = advect(stack[: L.split], v, g)
        out[L.split :] = advect(stack[L.split :], u, g)
        out += L.coef * stack[L.partner]
        out[self.iA] += L.a * np.sum(self.x * stack[self.sPB], axis=0)
        out[self.iB] += L.b * np.sum(self.x * stack[self.sPA], axis=0)
        return out

    def check_cfl(self, stack: FloatArray) -> tuple[FloatArray, FloatArray]:
        v, u = self.velocities(stack)
        speed = max(float(np.sqrt(np.sum(v * v, axis=0)).max()), float(np.sqrt(np.sum(u * u, axis=0)).max()))
        h = min(self.grid.spacing)
        courant = self.cfg.dt * speed / h
        if courant > self.cfg.cfl_limit:
            raise CFLViolation(self.cfg.dt, self.cfg.cfl_limit * h / speed, courant, self.cfg.cfl_limit)
        return v, u

    def step(self, stack: FloatArray, time: float) -> FloatArray:
        vel = self.check_cfl(stack)
        dt = self.cfg.dt
        mid = stack + 0.5 * dt * self.tendency(stack, vel)
        new = stack + dt * self.tendency(mid)
        self.check_health(new, time + dt)
        return new

    def check_health(self, stack: FloatArray, time: float) -> None:
        if not np.all(np.isfinite(stack)):
            bad = [nm for nm in self.layout.names if not np.all(np.isfinite(stack[self.layout.slices[nm]]))]
            raise StepFailure(f"non-finite values in {bad} at t={time:.6g}")
        tol = self.cfg.negativity_tol
        if tol is None:
            return
        for row in self.layout.density_rows:
            vals = stack[row]
            lo = float(vals.min())
            if lo < 0.0 and lo < -tol * float(np.abs(vals).max()):
                name = next(nm for nm in self.layout.names if self.layout.slices[nm].start == row)
                raise StepFailure(
                    f"density field {name} went negative (min {lo:.3e}, max {vals.max():.3e}) at t={time:.6g}"
                )


def _evolved_names(state: HydroState, mode: str) -> tuple[str, ...]:
    return PRIMARY_FIELDS + (CLOSURE_FIELDS if mode == HIERARCHY else ())


def step(state: HydroState, couplings: CouplingSet, cfg: StepConfig) -> HydroState:
    """Advance one time step with the two-stage midpoint scheme."""
    return next(simulate(state, couplings, cfg, steps=1, every=1, include_initial=False))


def simulate(
    state: HydroState,
    couplings: CouplingSet,
    cfg: StepConfig,
    steps: int,
    every: int = 1,
    include_initial: bool = True,
) -> Iterator[HydroState]:
    """Yield the state every ``every`` steps (and the initial one).

    In self-consistent mode the yielded states carry only the primary fields;
    use :func:`closure_fields` for the derived quantities.
    """
    if state.mode != cfg.mode and not (state.mode == HIERARCHY and cfg.mode == SELF_CONSISTENT):
        raise ValueError(f"cannot run a {state.mode} state in {cfg.mode} mode")
    names = _evolved_names(state, cfg.mode)
    eps = cfg.epsilon if cfg.epsilon is not None else state.epsilon
    stepper = _Stepper(state.grid, names, couplings, cfg, eps)
    stack = stepper.layout.pack(state)
    t = state.time
    if include_initial:
        yield HydroState(state.grid, t, stepper.layout.unpack(stack), cfg.mode, epsilon=eps)
    for i in range(1, steps + 1):
        stack = stepper.step(stack, t)
        t = state.time + i * cfg.dt
        if i % every == 0 or i == steps:
            yield HydroState(state.grid, t, stepper.layout.unpack(stack), cfg.mode, epsilon=eps)


def stable_dt(state: HydroState, cfl: float = 0.5) -> float:
    """Largest dt meeting the Courant limit for the current velocities."""
    c1 = courant_number(state, 1.0)
    return math.inf if c1 == 0.0 else cfl / c1


def closure_gap(state: HydroState) -> float:
    """``∫ |EA - A|v|²| dx``: distance of the evolved energy from its definition."""
    if "EA" not in state.fields:
        return 0.0
    v, _ = state.velocities()
    return float(state.grid.integrate(np.abs(state["EA"] - state.A * np.sum(v * v, axis=0))))


# -- snapshot files ----------------------------------------------------------


def write_snapshot(state: HydroState, path) -> None:
    """Plain-text field snapshot: header line then one line per cell."""
    g = state.grid
    names = [nm for nm in FIELD_SPECS if nm in state.fields]
    header = (
        f"# t={state.time!r} dim={g.dim} cells={','.join(map(str, g.cells))} "
        f"bounds={','.join(repr(b) for b in g.domain.upper_bounds)} "
        f"fields={','.join(f'{nm}:{FIELD_SPECS[nm][0]}' for nm in names)} mode={state.mode}"
    )
    cols = [np.arange(g.size, dtype=float)[:, None]]
    for nm in names:
        arr = state.fields[nm]
        cols.append(arr.reshape(1, -1).T if FIELD_SPECS[nm][0] == 0 else arr.reshape(g.dim, -1).T)
    data = np.hstack(cols)
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in data:
            fh.write(f"{int(row[0])} " + " ".join(f"{x:.17g}" for x in row[1:]) + "\n")


def read_snapshot(path) -> HydroState:
    with open(path) as fh:
        header = fh.readline()
    if not header.startswith("#"):
        raise ValueError(f"{path}: missing snapshot header")
    meta = dict(tok.split("=", 1) for tok in header.lstrip("#").split())
    cells = tuple(int(c) for c in meta["cells"].split(","))
    bounds = tuple(float(b) for b in meta["bounds"].split(","))
    grid = RiskGrid.uniform(bounds, cells)
    if grid.dim != int(meta["dim"]):
        raise ValueError(f"{path}: dim disagrees with bounds")
    data = np.loadtxt(path, comments="#", ndmin=2)
    col = 1
    fields_: dict[str, FloatArray] = {}
    for item in meta["fields"].split(","):
        nm, rank = item.split(":")
        if int(rank) == 0:
            fields_[nm] = data[:, col].reshape(grid.shape)
            col += 1
        else:
            fields_[nm] = data[:, col : col + grid.dim].T.reshape((grid.dim, *grid.shape))
            col += grid.dim
    mode = meta.get("mode", HIERARCHY if "EA" in fields_ else SELF_CONSISTENT)
    return HydroState(grid, float(meta["t"]), fields_, mode)
