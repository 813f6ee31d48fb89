"""Aggregate observables and risk moments of a hydro state.

Every aggregate is an integral of some density over the risk domain.  The
record below is the single home for all of them; column order is fixed by
:data:`COLUMNS` and shared with the ODE trajectories.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .espace import Field, FloatArray, RiskGrid
from .hydro import HIERARCHY, CouplingSet, HydroState, closure_fields

COLUMNS = (
    "t", "A", "B", "XPA", "YPB", "EA", "EB", "PA", "PB", "XP", "YP", "XE", "YE",
    "VXPA", "UYPB", "PEA", "PEB", "XA", "YB", "X2A", "Y2B", "XPAX2", "YPBY2",
    "X2EA", "Y2EB", "XVA", "YUB", "XPEA", "YPEB", "V4A", "U4B", "X", "Y", "X2", "sigma2",
)  # fmt: skip
VECTOR_COLUMNS = frozenset({"PA", "PB", "XP", "YP", "XE", "YE", "VXPA", "UYPB", "PEA", "PEB", "XA", "YB", "X", "Y"})
MOMENT_COLUMNS = frozenset({"X", "Y", "X2", "sigma2"})

Value = float | FloatArray | None


@dataclass
class AggregateRecord:
    t: float
    A: Value = None
    B: Value = None
    XPA: Value = None
    YPB: Value = None
    EA: Value = None
    EB: Value = None
    PA: Value = None
    PB: Value = None
    XP: Value = None
    YP: Value = None
    XE: Value = None
    YE: Value = None
    VXPA: Value = None
    UYPB: Value = None
    PEA: Value = None
    PEB: Value = None
    XA: Value = None
    YB: Value = None
    X2A: Value = None
    Y2B: Value = None
    XPAX2: Value = None
    YPBY2: Value = None
    X2EA: Value = None
    Y2EB: Value = None
    XVA: Value = None
    YUB: Value = None
    XPEA: Value = None
    YPEB: Value = None
    V4A: Value = None
    U4B: Value = None
    X: Value = None
    Y: Value = None
    X2: Value = None
    sigma2: Value = None

    def __getitem__(self, name: str) -> Value:
        return getattr(self, name)

    def as_dict(self) -> dict[str, Value]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def fill_moments(self) -> None:
        """Derive mean risks and dispersion from the moment aggregates."""
        self.X = _ratio(self.XA, self.A)
        self.Y = _ratio(self.YB, self.B)
        self.X2 = _ratio(self.X2A, self.A)
        if self.X2 is not None and self.X is not None:
            self.sigma2 = float(self.X2 - np.dot(self.X, self.X))
        else:
            self.sigma2 = None


def _ratio(num: Value, mass: Value) -> Value:
    if num is None or mass is None or not mass > 0.0:
        return None
    return num / mass


def measure(state: HydroState) -> AggregateRecord:
    """Integrate every aggregate of ``state``.

    Closure aggregates come from the evolved closure fields in hierarchy mode
    and from their algebraic definitions otherwise.
    """
    g = state.grid
    x = g.coords
    r2 = g.radius2
    I = g.integrate
    f = dict(state.fields)
    if state.mode != HIERARCHY or "EA" not in f:
        f.update(closure_fields(state))
    rec = AggregateRecord(t=float(state.time))
    for side, (rho, P, E, PE, VX, V4, XV) in {
        "A": ("A", "PA", "EA", "PEA", "VXPA", "V4A", "XVA"),
        "B": ("B", "PB", "EB", "PEB", "UYPB", "U4B", "YUB"),
    }.items():
        xP = np.sum(x * f[P], axis=0)
        xPE = np.sum(x * f[PE], axis=0)
        names = _SIDE_NAMES[side]
        vals = {
            "mass": I(f[rho]),
            "xp": I(xP),
            "energy": I(f[E]),
            "impulse": _vec(I(f[P])),
            "xxp": _vec(I(x * xP)),
            "xe": _vec(I(x * f[E])),
            "vx": _vec(I(f[VX])),
            "pe": _vec(I(f[PE])),
            "xa": _vec(I(x * f[rho])),
            "x2a": I(r2 * f[rho]),
            "x2p": I(r2 * xP),
            "x2e": I(r2 * f[E]),
            "xv": I(f[XV]),
            "xpe": I(xPE),
            "v4": I(f[V4]),
        }
        for key, col in names.items():
            setattr(rec, col, vals[key])
    rec.fill_moments()
    return rec


def _vec(v) -> FloatArray:
    return np.atleast_1d(np.asarray(v, dtype=float))


_SIDE_NAMES = {
    "A": {
        "mass": "A", "xp": "XPA", "energy": "EA", "impulse": "PA", "xxp": "XP", "xe": "XE",
        "vx": "VXPA", "pe": "PEA", "xa": "XA", "x2a": "X2A", "x2p": "XPAX2", "x2e": "X2EA",
        "xv": "XVA", "xpe": "XPEA", "v4": "V4A",
    },
    "B": {
        "mass": "B", "xp": "YPB", "energy": "EB", "impulse": "PB", "xxp": "YP", "xe": "YE",
        "vx": "UYPB", "pe": "PEB", "xa": "YB", "x2a": "Y2B", "x2p": "YPBY2", "x2e": "Y2EB",
        "xv": "YUB", "xpe": "YPEB", "v4": "U4B",
    },
}  # fmt: skip


def probability_view(A: Field | FloatArray, grid: RiskGrid | None = None) -> FloatArray:
    """Normalise a density to unit integral."""
    if isinstance(A, Field):
        grid, values = A.grid, A.values
    else:
        values = np.asarray(A, dtype=float)
        if grid is None:
            raise ValueError("grid is required for a bare array")
    mass = grid.integrate(values)
    if not mass > 0.0:
        raise ValueError(f"cannot normalise a density with total mass {mass}")
    return values / mass


# -- series ------------------------------------------------------------------


class AggregateSeries:
    """Time-ordered aggregate records with strictly increasing ``t``."""

    def __init__(self, records: Iterable[AggregateRecord] = (), dim: int = 1):
        self.records: list[AggregateRecord] = []
        self.dim = dim
        for r in records:
            self.append(r)

    def append(self, record: AggregateRecord) -> None:
        if self.records and not record.t > self.records[-1].t:
            raise ValueError(f"times must increase strictly: {record.t} after {self.records[-1].t}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def t(self) -> FloatArray:
        return np.array([r.t for r in self.records])

    def sample_interval(self, rtol: float = 1e-6) -> float:
        """Uniform spacing of the samples; raises if the spacing varies."""
        t = self.t
        if len(t) < 2:
            raise ValueError("need at least two samples")
        steps = np.diff(t)
        h = float(np.mean(steps))
        if np.max(np.abs(steps - h)) > rtol * max(h, 1e-300):
            raise ValueError("series is not uniformly sampled")
        return h

    def column(self, name: str, component: int | None = None) -> FloatArray:
        """Values of one column; missing entries become nan."""
        if name not in COLUMNS:
            raise KeyError(f"unknown aggregate column {name!r}")
        out = []
        for r in self.records:
            v = getattr(r, name)
            if v is None:
                out.append(np.nan if component is not None or name not in VECTOR_COLUMNS else np.full(self.dim, np.nan))
            elif component is not None:
                out.append(np.atleast_1d(v)[component])
            else:
                out.append(v)
        return np.array(out, dtype=float)

    @staticmethod
    def header(dim: int) -> list[str]:
        cols = []
        for c in COLUMNS:
            if c in VECTOR_COLUMNS and dim > 1:
                cols.extend(f"{c}_{k + 1}" for k in range(dim))
            else:
                cols.append(c)
        return cols

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header(self.dim))
        for r in self.records:
            row = []
            for c in COLUMNS:
                v = getattr(r, c)
                width = self.dim if c in VECTOR_COLUMNS else 1
                if v is None:
                    row.extend([""] * width)
                else:
                    row.extend(_fmt(x) for x in np.atleast_1d(v))
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: str | Path) -> AggregateSeries:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty file")
        head = rows[0]
        dim = 1
        for name in head:
            base, _, suffix = name.rpartition("_")
            if base in VECTOR_COLUMNS and suffix.isdigit():
                dim = max(dim, int(suffix))
        if head != cls.header(dim):
            raise ValueError(f"{path}: header does not match the aggregate column schema")
        series = cls(dim=dim)
        for line_no, row in enumerate(rows[1:], start=2):
            vals = iter(row)
            kw = {}
            for c in COLUMNS:
                width = dim if c in VECTOR_COLUMNS else 1
                cells = [next(vals) for _ in range(width)]
                if all(s == "" for s in cells):
                    kw[c] = None
                    continue
                try:
                    nums = [float(s) for s in cells]
                except ValueError as exc:
                    raise ValueError(f"{path}:{line_no}: bad number in column {c}") from exc
                kw[c] = np.array(nums) if c in VECTOR_COLUMNS else nums[0]
            series.append(AggregateRecord(**kw))
        return series


def _fmt(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def measure_series(states: Iterable[HydroState]) -> AggregateSeries:
    states = iter(states)
    first = next(states)
    series = AggregateSeries([measure(first)], dim=first.grid.dim)
    for s in states:
        series.append(measure(s))
    return series


# -- aggregate identities ----------------------------------------------------


@dataclass
class IdentityResidual:
    """Forward-difference check of one aggregate identity.

    ``residual`` is ``max_n |ΔQ/Δt - rhs_n| / max_n Σ|rhs terms|``.
    """

    name: str
    residual: float
    scale: float
    max_abs: float


IDENTITIES = ("i_A", "i_B", "ii_XPA", "iii_PA", "iv_XA", "v_X2A")


def _identity_terms(state: HydroState, couplings: CouplingSet) -> dict[str, tuple[FloatArray, list[FloatArray]]]:
    """Per identity: (monitored quantity, list of right-hand-side terms)."""
    g = state.grid
    x = g.coords
    r2 = g.radius2
    I = g.integrate
    A, B, PA, PB = state.A, state.B, state.PA, state.PB
    v, _ = state.velocities()
    xPA = np.sum(x * PA, axis=0)
    xPB = np.sum(x * PB, axis=0)
    k = couplings
    return {
        "i_A": (_vec(I(A)), [_vec(k.a * I(xPB))]),
        "i_B": (_vec(I(B)), [_vec(k.b * I(xPA))]),
        "ii_XPA": (_vec(I(xPA)), [_vec(I(A * np.sum(v * v, axis=0))), _vec(k.c * I(xPB))]),
        "iii_PA": (_vec(I(PA)), [_vec(k.c * I(PB))]),
        "iv_XA": (_vec(I(x * A)), [_vec(I(PA)), _vec(k.a * I(x * xPB))]),
        "v_X2A": (_vec(I(r2 * A)), [_vec(2.0 * I(xPA)), _vec(k.a * I(r2 * xPB))]),
    }


class IdentityMonitor:
    """Streaming form of :func:`identity_residuals`; feed states in time order."""

    def __init__(self, couplings: CouplingSet):
        self.couplings = couplings
        self._prev = None
        self._err = {name: 0.0 for name in IDENTITIES}
        self._scale = {name: 0.0 for name in IDENTITIES}
        self.count = 0

    def push(self, state: HydroState) -> None:
        terms = _identity_terms(state, self.couplings)
        for name in IDENTITIES:
            mag = float(np.max(sum(np.abs(term) for term in terms[name][1])))
            self._scale[name] = max(self._scale[name], mag)
        if self._prev is not None:
            t0, prev = self._prev
            h = state.time - t0
            if h <= 0.0:
                raise ValueError("states must be strictly increasing in time")
            for name in IDENTITIES:
                lhs = (terms[name][0] - prev[name][0]) / h
                err = float(np.max(np.abs(lhs - sum(prev[name][1]))))
                self._err[name] = max(self._err[name], err)
        self._prev = (state.time, terms)
        self.count += 1

    def result(self) -> dict[str, IdentityResidual]:
        if self.count < 2:
            raise ValueError("need at least two states")
        out = {}
        for name in IDENTITIES:
            err, scale = self._err[name], self._scale[name]
            out[name] = IdentityResidual(name, err / scale if scale > 0 else err, scale, err)
        return out


def identity_residuals(states: Iterable[HydroState], couplings: CouplingSet) -> dict[str, IdentityResidual]:
    """Check the exact aggregate consequences of the continuity and motion equations.

    ``states`` must be consecutive, equally spaced samples.  The time
    derivative of each monitored aggregate is a forward difference compared
    with the right-hand side at the left sample, so the residual carries the
    first-order error of both the time and the space discretisation.
    Residuals are normalized by the largest summed magnitude of the
    right-hand-side terms.
    """
    mon = IdentityMonitor(couplings)
    for s in states:
        mon.push(s)
    return mon.result()
