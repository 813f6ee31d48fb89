"""Linear constant-coefficient systems for the aggregate observables.

Integrating the field equations over the risk domain closes into linear ODE
systems ``y' = M y`` for growing sets of aggregates:

* level ``A``: masses, flux projections ``x·P`` and energies;
* level ``B``: adds first moments, total impulses, energy impulses and the
  risk-weighted fluxes needed for the mean risk (vector entries, one block per
  risk axis);
* level ``C``: adds the second-moment chain needed for the mean square risk;
* ``combined``: all of the above.

The matrix is assembled from :data:`TERMS`, one row per nonzero coefficient,
so the structure can be listed and audited directly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .espace import FloatArray
from .hydro import CouplingSet, ConstraintViolation, Constraint

LEVELS = ("A", "B", "C", "combined")

LEVEL_A_LABELS = ("A", "B", "XPA", "YPB", "EA", "EB")
LEVEL_B_LABELS = ("XA", "YB", "PA", "PB", "XP", "YP", "XE", "YE", "PEA", "PEB", "VXPA", "UYPB")
LEVEL_C_LABELS = ("X2A", "Y2B", "XPAX2", "YPBY2", "X2EA", "Y2EB", "XPEA", "YPEB", "V4A", "U4B", "XVA", "YUB")

# Which blocks each level contains.
LEVEL_BLOCKS = {"A": ("A",), "B": ("A", "B"), "C": ("A", "C"), "combined": ("A", "B", "C")}

# Constraints a level depends on.
LEVEL_CONSTRAINTS = {
    "A": ("omega", "gamma_e"),
    "B": ("omega", "gamma_e", "omega_pe", "omega_v"),
    "C": ("omega", "gamma_e", "omega_pe", "gamma_vu", "gamma_xv", "gamma_e>gamma_vu", "gamma_e>gamma_xv"),
    "combined": None,
}
LEVEL_MODES = {
    "A": ("omega", "gamma_e"),
    "B": ("omega", "gamma_e", "omega_pe", "omega_v"),
    "C": ("omega", "gamma_e", "omega_pe", "gamma_vu", "gamma_xv"),
    "combined": ("omega", "gamma_e", "omega_pe", "omega_v", "gamma_vu", "gamma_xv"),
}
OSCILLATORY = frozenset({"omega", "omega_pe", "omega_v"})


@dataclass(frozen=True)
class Term:
    """``d(row)/dt`` receives ``coef * column``.

    ``coef`` is a coupling name or a structural number.  Rows of block ``B``
    are vectors and the term applies to every risk axis separately.
    """

    block: str
    row: str
    col: str
    coef: str | float
    origin: str


TERMS: tuple[Term, ...] = (
    # aggregate masses and their flux projections
    Term("A", "A", "YPB", "a", "assets continuity source a x·PB"),
    Term("A", "B", "XPA", "b", "revenue continuity source b x·PA"),
    Term("A", "XPA", "EA", 1.0, "flux term of x·PA integrated by parts"),
    Term("A", "XPA", "YPB", "c", "motion source c PB projected on x"),
    Term("A", "YPB", "EB", 1.0, "flux term of x·PB integrated by parts"),
    Term("A", "YPB", "XPA", "d", "motion source d PA projected on x"),
    Term("A", "EA", "EB", "c_e", "energy source c_e EB"),
    Term("A", "EB", "EA", "d_e", "energy source d_e EA"),
    # mean risk chain
    Term("B", "XA", "PA", 1.0, "flux term of x A integrated by parts"),
    Term("B", "XA", "YP", "a", "first moment of a x·PB"),
    Term("B", "YB", "PB", 1.0, "flux term of x B integrated by parts"),
    Term("B", "YB", "XP", "b", "first moment of b x·PA"),
    Term("B", "PA", "PB", "c", "motion source c PB"),
    Term("B", "PB", "PA", "d", "motion source d PA"),
    Term("B", "XP", "XE", 1.0, "flux term of x(x·PA): energy part"),
    Term("B", "XP", "VXPA", 1.0, "flux term of x(x·PA): v(x·PA) part"),
    Term("B", "XP", "YP", "c", "first moment of c x·PB"),
    Term("B", "YP", "YE", 1.0, "flux term of x(x·PB): energy part"),
    Term("B", "YP", "UYPB", 1.0, "flux term of x(x·PB): u(x·PB) part"),
    Term("B", "YP", "XP", "d", "first moment of d x·PA"),
    Term("B", "XE", "PEA", 1.0, "flux term of x EA integrated by parts"),
    Term("B", "XE", "YE", "c_e", "first moment of c_e EB"),
    Term("B", "YE", "PEB", 1.0, "flux term of x EB integrated by parts"),
    Term("B", "YE", "XE", "d_e", "first moment of d_e EA"),
    Term("B", "PEA", "PEB", "c_pe", "energy impulse source c_pe PEB"),
    Term("B", "PEB", "PEA", "d_pe", "energy impulse source d_pe PEA"),
    Term("B", "VXPA", "UYPB", "c_v", "risk-weighted flux source c_v UYPB"),
    Term("B", "UYPB", "VXPA", "d_v", "risk-weighted flux source d_v VXPA"),
    # mean square risk chain
    Term("C", "X2A", "XPA", 2.0, "flux term of x² A integrated by parts"),
    Term("C", "X2A", "YPBY2", "a", "second moment of a x·PB"),
    Term("C", "Y2B", "YPB", 2.0, "flux term of x² B integrated by parts"),
    Term("C", "Y2B", "XPAX2", "b", "second moment of b x·PA"),
    Term("C", "XPAX2", "X2EA", 1.0, "flux term of x² x·PA: energy part"),
    Term("C", "XPAX2", "XVA", 2.0, "flux term of x² x·PA: (x·v)² A part"),
    Term("C", "XPAX2", "YPBY2", "c", "second moment of c x·PB"),
    Term("C", "YPBY2", "Y2EB", 1.0, "flux term of x² x·PB: energy part"),
    Term("C", "YPBY2", "YUB", 2.0, "flux term of x² x·PB: (x·u)² B part"),
    Term("C", "YPBY2", "XPAX2", "d", "second moment of d x·PA"),
    Term("C", "X2EA", "XPEA", 2.0, "flux term of x² EA integrated by parts"),
    Term("C", "X2EA", "Y2EB", "c_e", "second moment of c_e EB"),
    Term("C", "Y2EB", "YPEB", 2.0, "flux term of x² EB integrated by parts"),
    Term("C", "Y2EB", "X2EA", "d_e", "second moment of d_e EA"),
    Term("C", "XPEA", "V4A", 1.0, "flux term of x·PEA integrated by parts"),
    Term("C", "XPEA", "YPEB", "c_pe", "projection of c_pe PEB"),
    Term("C", "YPEB", "U4B", 1.0, "flux term of x·PEB integrated by parts"),
    Term("C", "YPEB", "XPEA", "d_pe", "projection of d_pe PEA"),
    Term("C", "V4A", "U4B", "c_vu", "fourth-order source c_vu U4B"),
    Term("C", "U4B", "V4A", "d_vu", "fourth-order source d_vu V4A"),
    Term("C", "XVA", "YUB", "c_xv", "quadratic flux source c_xv YUB"),
    Term("C", "YUB", "XVA", "d_xv", "quadratic flux source d_xv XVA"),
)

_BLOCK_LABELS = {"A": LEVEL_A_LABELS, "B": LEVEL_B_LABELS, "C": LEVEL_C_LABELS}


def state_labels(level: str, dim: int = 1) -> tuple[str, ...]:
    """Flattened state labels; vector entries get ``_k`` suffixes when dim > 1."""
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}, got {level!r}")
    out: list[str] = []
    for block in LEVEL_BLOCKS[level]:
        for name in _BLOCK_LABELS[block]:
            if block == "B" and dim > 1:
                out.extend(f"{name}_{k + 1}" for k in range(dim))
            else:
                out.append(name)
    return tuple(out)


@dataclass
class LinearSystem:
    labels: tuple[str, ...]
    matrix: FloatArray
    level: str
    dim: int = 1
    entries: list[tuple[str, str, float, str]] = field(default_factory=list)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    @property
    def size(self) -> int:
        return len(self.labels)

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.matrix)), initial=0.0))

    def dump(self) -> str:
        """Labelled matrix followed by the coefficient listing."""
        w = max(8, max(len(lb) for lb in self.labels) + 1)
        lines = [f"# level {self.level}, dim {self.dim}, {self.size} states", " " * w + "".join(f"{lb:>{w}}" for lb in self.labels)]
        for lb, row in zip(self.labels, self.matrix):
            lines.append(f"{lb:<{w}}" + "".join(f"{_num(x):>{w}}" for x in row))
        lines.append("")
        lines.append(f"{'row':<{w}}{'column':<{w}}{'coefficient':>14}  origin")
        for row, col, val, origin in self.entries:
            lines.append(f"{row:<{w}}{col:<{w}}{_num(val):>14}  {origin}")
        return "\n".join(lines) + "\n"


def _num(x: float) -> str:
    return "0" if x == 0.0 else f"{x:.6g}"


def build(couplings: CouplingSet, level: str = "A", dim: int = 1, override: bool = False) -> LinearSystem:
    """Assemble ``M`` for ``level``.

    The sign rules relevant to the level are enforced unless ``override``.
    """
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}, got {level!r}")
    if not override:
        couplings.require(LEVEL_CONSTRAINTS[level])
    labels = state_labels(level, dim)
    pos = {lb: i for i, lb in enumerate(labels)}
    M = np.zeros((len(labels), len(labels)))
    entries = []
    for term in TERMS:
        if term.block not in LEVEL_BLOCKS[level]:
            continue
        value = getattr(couplings, term.coef) if isinstance(term.coef, str) else float(term.coef)
        coef_text = term.coef if isinstance(term.coef, str) else _num(term.coef)
        if term.block == "B" and dim > 1:
            pairs = [(f"{term.row}_{k + 1}", f"{term.col}_{k + 1}") for k in range(dim)]
        else:
            pairs = [(term.row, term.col)]
        for r, c in pairs:
            M[pos[r], pos[c]] += value
            entries.append((r, c, value, f"{coef_text}: {term.origin}"))
    return LinearSystem(labels, M, level, dim, entries)


# -- time integration --------------------------------------------------------


@dataclass
class OdeTrajectory:
    labels: tuple[str, ...]
    t: FloatArray
    y: FloatArray  # shape (samples, states)
    truncated: bool = False
    report: str = ""

    def __getitem__(self, label: str) -> FloatArray:
        return self.y[:, self.labels.index(label)]


def rk4_propagator(M: FloatArray, dt: float) -> FloatArray:
    """One classical Runge-Kutta step for ``y' = M y`` as a matrix.

    For a linear autonomous system the four stages collapse exactly to the
    degree-four Taylor polynomial of ``exp(M dt)``.
    """
    h = dt * np.asarray(M, dtype=float)
    eye = np.eye(len(h))
    h2 = h @ h
    return eye + h + h2 / 2.0 + h2 @ h / 6.0 + h2 @ h2 / 24.0


def rk4_step(M: FloatArray, y: FloatArray, dt: float) -> FloatArray:
    """Stage-by-stage RK4 step, kept as the reference for the propagator."""
    k1 = M @ y
    k2 = M @ (y + 0.5 * dt * k1)
    k3 = M @ (y + 0.5 * dt * k2)
    k4 = M @ (y + dt * k3)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


OVERFLOW_LIMIT = 1e300


def integrate_ode(
    system: LinearSystem,
    y0: Sequence[float],
    dt: float,
    steps: int,
    every: int = 1,
    max_dt_radius: float = 0.1,
) -> OdeTrajectory:
    """Classical RK4 from ``t = 0``, sampled every ``every`` steps.

    Steps are applied in blocks through precomputed powers of the RK4
    propagator, which is the same linear map as stepping one at a time.
    Trajectories that overflow are cut at the last finite sample.
    """
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (system.size,):
        raise ValueError(f"y0 needs {system.size} entries, got {y0.shape}")
    if dt <= 0.0 or steps < 0 or every < 1:
        raise ValueError("need dt > 0, steps >= 0, every >= 1")
    rho = system.spectral_radius()
    if dt * rho > max_dt_radius:
        raise ValueError(
            f"dt * spectral radius = {dt * rho:.4g} exceeds {max_dt_radius}; use dt <= {max_dt_radius / rho:.4g}"
        )
    R = rk4_propagator(system.matrix, dt)
    n_samples = steps // every
    per_block = max(1, 256 // every)
    R_every = np.linalg.matrix_power(R, every)
    powers = [R_every]
    for _ in range(per_block - 1):
        powers.append(R_every @ powers[-1])
    P = np.array(powers)  # P[k] advances k + 1 samples

    out = np.empty((n_samples + 1, system.size))
    out[0] = y0
    y = y0
    filled = 1
    truncated = False
    report = ""
    with np.errstate(over="ignore", invalid="ignore"):
        while filled <= n_samples:
            take = min(per_block, n_samples + 1 - filled)
            block = P[:take] @ y
            bad = ~np.all(np.isfinite(block) & (np.abs(block) < OVERFLOW_LIMIT), axis=1)
            if bad.any():
                first = int(np.argmax(bad))
                out[filled : filled + first] = block[:first]
                filled += first
                truncated = True
                report = (
                    f"overflow after t={(filled - 1) * every * dt:.6g}; "
                    f"trajectory truncated to {filled} samples"
                )
                break
            out[filled : filled + take] = block
            filled += take
            y = block[-1]
    t = np.arange(filled) * every * dt
    return OdeTrajectory(system.labels, t, out[:filled], truncated, report)


# -- closed form -------------------------------------------------------------


def closed_form(system: LinearSystem, y0: Sequence[float], t: float | Sequence[float], cond_limit: float = 1e8) -> FloatArray:
    """``exp(M t) y0`` by eigendecomposition.

    Falls back to a Padé matrix exponential when the eigenvector basis is
    ill-conditioned (defective or nearly defective ``M``).  Returns shape
    ``(states,)`` for scalar ``t`` and ``(len(t), states)`` otherwise.
    """
    y0 = np.asarray(y0, dtype=float)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    decomp = _eigen(system.matrix, cond_limit)
    if decomp is not None:
        w, V, coeff = decomp[0], decomp[1], np.linalg.solve(decomp[1], y0.astype(complex))
        Y = (np.exp(np.outer(ts, w)) * coeff) @ V.T
        out = Y.real
    else:
        out = np.array([scipy.linalg.expm(system.matrix * tt) @ y0 for tt in ts])
    out[ts == 0.0] = y0  # skip the basis round trip
    return out[0] if np.ndim(t) == 0 else out


def _eigen(M: FloatArray, cond_limit: float):
    w, V = np.linalg.eig(M)
    if not np.all(np.isfinite(V)) or np.linalg.cond(V) > cond_limit:
        return None
    return w, V


@dataclass
class ShapeTerm:
    """``coef * exp(rate t) * {1, cos(freq t), sin(freq t)}``."""

    kind: str  # "exp", "cos" or "sin"
    rate: float
    freq: float
    coef: float

    def __call__(self, t: FloatArray) -> FloatArray:
        base = np.exp(self.rate * np.asarray(t))
        if self.kind == "cos":
            return self.coef * base * np.cos(self.freq * t)
        if self.kind == "sin":
            return self.coef * base * np.sin(self.freq * t)
        return self.coef * base


def shape_coefficients(system: LinearSystem, y0: Sequence[float], label: str, tol: float = 1e-9) -> list[ShapeTerm]:
    """Real modal expansion of one state entry from the eigendecomposition.

    Eigenvalues that agree within ``tol`` are merged, so repeated modes from
    independent blocks give one term.  Requires a diagonalizable ``M``.
    """
    decomp = _eigen(system.matrix, 1e12)
    if decomp is None:
        raise ValueError("matrix is defective; modal coefficients are undefined")
    w, V = decomp
    amp = V[system.index(label)] * np.linalg.solve(V, np.asarray(y0, dtype=complex))
    groups: list[list] = []  # [lambda, summed amplitude]
    for lam, a in zip(w, amp):
        if lam.imag < -tol:
            continue  # conjugate partner folded into the positive-frequency term
        lam = complex(lam.real, 0.0 if abs(lam.imag) <= tol else lam.imag)
        for g in groups:
            if abs(g[0] - lam) <= tol * max(1.0, abs(lam)):
                g[1] += a
                break
        else:
            groups.append([lam, complex(a)])
    terms = []
    for lam, a in groups:
        sigma = 0.0 if abs(lam.real) <= tol else lam.real
        if lam.imag == 0.0:
            terms.append(ShapeTerm("exp", sigma, 0.0, a.real))
        else:
            terms.append(ShapeTerm("cos", sigma, lam.imag, 2.0 * a.real))
            terms.append(ShapeTerm("sin", sigma, lam.imag, -2.0 * a.imag))
    return terms


def level_a_coefficients(couplings: CouplingSet, y0: Sequence[float]) -> dict[str, FloatArray]:
    """Trend and cycle constants of the aggregate masses from initial values.

    Returns arrays ``[const, cos ωt, sin ωt, exp(γ_e t), exp(-γ_e t)]`` for
    ``"A"`` and ``"B"``, solved in closed form (no eigendecomposition).
    ``y0`` is ordered as :data:`LEVEL_A_LABELS`.
    """
    A0, B0, XPA0, YPB0, EA0, EB0 = (float(v) for v in y0)
    k = couplings
    w, g = k.omega, k.gamma_e
    if math.isnan(w) or math.isnan(g):
        raise ConstraintViolation(k.violations(("omega", "gamma_e")))
    # energies: EA = Ep e^{gt} + Em e^{-gt}, EB = Fp e^{gt} + Fm e^{-gt}
    Ep, Em = 0.5 * (EA0 + k.c_e * EB0 / g), 0.5 * (EA0 - k.c_e * EB0 / g)
    Fp, Fm = 0.5 * (EB0 + k.d_e * EA0 / g), 0.5 * (EB0 - k.d_e * EA0 / g)
    # forced flux projections: YPB_p = kA * EA(t), XPA_p = kB * EB(t)
    kA = (k.d_e + k.d) / (g * g + w * w)
    kB = (k.c_e + k.c) / (g * g + w * w)
    P = YPB0 - kA * EA0
    Q = (EB0 + k.d * XPA0 - kA * k.c_e * EB0) / w
    R = XPA0 - kB * EB0
    S = (EA0 + k.c * YPB0 - kB * k.d_e * EA0) / w
    A = np.array([
        A0 + k.a * Q / w - k.a * kA * (Ep - Em) / g,
        -k.a * Q / w,
        k.a * P / w,
        k.a * kA * Ep / g,
        -k.a * kA * Em / g,
    ])  # fmt: skip
    B = np.array([
        B0 + k.b * S / w - k.b * kB * (Fp - Fm) / g,
        -k.b * S / w,
        k.b * R / w,
        k.b * kB * Fp / g,
        -k.b * kB * Fm / g,
    ])  # fmt: skip
    return {"A": A, "B": B}


# -- modes and constraints ---------------------------------------------------


@dataclass
class ModeSet:
    eigenvalues: np.ndarray
    theoretical: dict[str, float]
    present: dict[str, bool]

    @property
    def all_present(self) -> bool:
        return all(self.present.values())


def modes(system: LinearSystem, couplings: CouplingSet, tol: float = 1e-9) -> ModeSet:
    """Eigenvalues of ``M`` matched against the frequencies and growth rates."""
    w = np.linalg.eigvals(system.matrix)
    theory = {name: getattr(couplings, name) for name in LEVEL_MODES[system.level]}
    present = {}
    for name, value in theory.items():
        if math.isnan(value):
            present[name] = False
            continue
        scale = tol * max(1.0, value)
        if name in OSCILLATORY:
            hit = (np.abs(np.abs(w.imag) - value) <= scale) & (np.abs(w.real) <= scale)
        else:
            hit = (np.abs(np.abs(w.real) - value) <= scale) & (np.abs(w.imag) <= scale)
        present[name] = bool(hit.any())
    return ModeSet(w, theory, present)


@dataclass
class ConstraintReport:
    results: list[Constraint]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.results)

    @property
    def failed(self) -> list[Constraint]:
        return [c for c in self.results if not c.passed]

    def text(self) -> str:
        lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.label:<24} {c.detail}" for c in self.results]
        lines.append("all constraints satisfied" if self.ok else f"{len(self.failed)} constraint(s) violated")
        return "\n".join(lines) + "\n"


def check_constraints(couplings: CouplingSet) -> ConstraintReport:
    return ConstraintReport(couplings.constraints())


def initial_aggregates(record, level: str, dim: int = 1) -> FloatArray:
    """Pull the ODE state vector out of an aggregate record."""
    values = []
    for block in LEVEL_BLOCKS[level]:
        for name in _BLOCK_LABELS[block]:
            v = record[name]
            if v is None:
                raise ValueError(f"aggregate {name} is missing from the record")
            values.extend(np.atleast_1d(v)[:dim] if block == "B" else [float(v)])
    return np.array(values, dtype=float)


def trajectory_records(traj: OdeTrajectory, level: str, dim: int = 1):
    """Aggregate records for an ODE trajectory (missing aggregates left empty)."""
    from .aggregates import AggregateRecord

    recs = []
    for t, y in zip(traj.t, traj.y):
        rec = AggregateRecord(t=float(t))
        i = 0
        for block in LEVEL_BLOCKS[level]:
            for name in _BLOCK_LABELS[block]:
                if block == "B":
                    setattr(rec, name, np.array(y[i : i + dim]))
                    i += dim
                else:
                    setattr(rec, name, float(y[i]))
                    i += 1
        rec.fill_moments()
        recs.append(rec)
    return recs


def warn_if_slow(system: LinearSystem, dt: float) -> None:
    rho = system.spectral_radius()
    if dt * rho > 0.05:
        warnings.warn(f"dt * spectral radius = {dt * rho:.3g}; RK4 accuracy degrades", stacklevel=2)
