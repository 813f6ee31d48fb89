"""E-particle ensembles and their deposition onto the risk grid.

Each particle carries a position in risk space, a risk-drift velocity and a
handful of extensive variables (assets, revenue, ...).  Deposition is plain
nearest-cell binning, so the integral of a deposited density equals the
ensemble total exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .espace import FloatArray, RiskGrid

DEFAULT_NAMES = ("a", "b")


def particle_impulse(u: float, v: Sequence[float]) -> FloatArray:
    """Impulse of one particle: extensive variable times velocity."""
    return float(u) * np.asarray(v, dtype=float)


@dataclass(frozen=True)
class EParticle:
    position: tuple[float, ...]
    velocity: tuple[float, ...]
    variables: tuple[float, ...]


@dataclass
class Ensemble:
    """Column-stored particle ensemble.

    ``positions`` and ``velocities`` have shape ``(N, dim)``, ``variables``
    has shape ``(N, l)``.
    """

    positions: FloatArray
    velocities: FloatArray
    variables: FloatArray
    variable_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        self.variables = np.asarray(self.variables, dtype=float)
        if self.variables.ndim == 1:
            self.variables = self.variables[:, None]
        n = len(self.positions)
        if self.velocities.shape != self.positions.shape:
            raise ValueError("positions and velocities must have the same shape")
        if len(self.variables) != n:
            raise ValueError("every particle needs the same number of variables")
        if not self.variable_names:
            l = self.variables.shape[1]
            self.variable_names = tuple(DEFAULT_NAMES[:l]) if l <= 2 else tuple(f"u{i + 1}" for i in range(l))
        if len(self.variable_names) != self.variables.shape[1]:
            raise ValueError("variable_names does not match variable count")

    @classmethod
    def from_particles(cls, particles: Iterable[EParticle], variable_names: Sequence[str] = ()) -> Ensemble:
        ps = list(particles)
        if not ps:
            raise ValueError("empty ensemble")
        return cls(
            np.array([p.position for p in ps]),
            np.array([p.velocity for p in ps]),
            np.array([p.variables for p in ps]),
            tuple(variable_names),
        )

    def __len__(self) -> int:
        return len(self.positions)

    def __iter__(self):
        for x, v, u in zip(self.positions, self.velocities, self.variables):
            yield EParticle(tuple(x), tuple(v), tuple(u))

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def total(self, variable_index: int = 0) -> float:
        return float(self.variables[:, variable_index].sum())

    def merged(self, other: Ensemble) -> Ensemble:
        return Ensemble(
            np.vstack([self.positions, other.positions]),
            np.vstack([self.velocities, other.velocities]),
            np.vstack([self.variables, other.variables]),
            self.variable_names,
        )


def cell_indices(grid: RiskGrid, positions: FloatArray) -> np.ndarray:
    """Flat (C-order) cell index of each position; rejects points outside."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if positions.shape[1] != grid.dim:
        raise ValueError(f"positions have {positions.shape[1]} coordinates, grid has {grid.dim}")
    inside = grid.domain.contains(positions)
    if not inside.all():
        bad = np.flatnonzero(~inside)
        raise ValueError(
            f"{bad.size} particle(s) outside the open domain, first at index {bad[0]}: "
            f"{positions[bad[0]].tolist()}"
        )
    idx = np.floor(positions / np.asarray(grid.spacing)).astype(np.int64)
    idx = np.minimum(idx, np.asarray(grid.cells) - 1)
    return np.ravel_multi_index(tuple(idx.T), grid.shape)


def deposit(ensemble: Ensemble, grid: RiskGrid, variable_index: int = 0) -> tuple[FloatArray, FloatArray]:
    """Bin one extensive variable and its impulse onto the grid.

    Returns ``(density, impulse)`` with shapes ``grid.shape`` and
    ``(dim, *grid.shape)``.
    """
    flat = cell_indices(grid, ensemble.positions)
    u = ensemble.variables[:, variable_index]
    vol = grid.cell_volume
    density = np.bincount(flat, weights=u, minlength=grid.size) / vol
    impulse = np.stack(
        [np.bincount(flat, weights=u * ensemble.velocities[:, k], minlength=grid.size) / vol for k in range(grid.dim)]
    )
    return density.reshape(grid.shape), impulse.reshape((grid.dim, *grid.shape))


def default_epsilon(density: FloatArray) -> float:
    return 1e-12 * max(float(np.max(density, initial=0.0)), 1.0)


def velocity_field(density: FloatArray, impulse: FloatArray, epsilon: float | None = None) -> FloatArray:
    """Velocity ``impulse / density`` regularised in vacuum cells.

    Where the density is at or below ``epsilon`` and the impulse is also
    negligible (below ``epsilon * max|impulse|``) the velocity is zero;
    elsewhere the density is floored at ``epsilon``.
    """
    density = np.asarray(density, dtype=float)
    impulse = np.asarray(impulse, dtype=float)
    if epsilon is None:
        epsilon = default_epsilon(density)
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    v = impulse / np.maximum(density, epsilon)
    pmax = float(np.max(np.abs(impulse), initial=0.0))
    quiet = (density <= epsilon) & np.all(np.abs(impulse) <= epsilon * pmax, axis=0)
    v[:, quiet] = 0.0
    return v


def sample_ensemble(
    rng: np.random.Generator,
    grid: RiskGrid,
    n_particles: int,
    center: Sequence[float],
    width: float,
    velocity: Sequence[float],
    totals: Sequence[float] = (1.0, 1.0),
    velocity_spread: float = 0.0,
    variable_names: Sequence[str] = DEFAULT_NAMES,
) -> Ensemble:
    """Gaussian cloud of particles truncated to the domain by rejection.

    Every particle gets an equal share of each entry of ``totals``.
    """
    upper = np.asarray(grid.domain.upper_bounds)
    center = np.broadcast_to(np.asarray(center, dtype=float), upper.shape)
    out = np.empty((0, grid.dim))
    while len(out) < n_particles:
        draw = rng.normal(center, width, size=(2 * (n_particles - len(out)) + 16, grid.dim))
        out = np.vstack([out, draw[grid.domain.contains(draw)]])
    positions = out[:n_particles]
    vel = np.broadcast_to(np.asarray(velocity, dtype=float), upper.shape)
    velocities = vel + velocity_spread * rng.standard_normal((n_particles, grid.dim))
    variables = np.tile(np.asarray(totals, dtype=float) / n_particles, (n_particles, 1))
    return Ensemble(positions, velocities, variables, tuple(variable_names[: len(totals)]))


# -- snapshot files ----------------------------------------------------------


def save_ensemble(ensemble: Ensemble, path: str | Path) -> None:
    """Write one particle per line: ``x1..xn v1..vn u1..ul``."""
    header = f"dim={ensemble.dim} variables={','.join(ensemble.variable_names)}"
    data = np.hstack([ensemble.positions, ensemble.velocities, ensemble.variables])
    np.savetxt(path, data, fmt="%.17g", header=header)


def load_ensemble(path: str | Path, dim: int | None = None, variable_names: Sequence[str] = ()) -> Ensemble:
    """Read a particle snapshot; ``dim`` may come from a ``# dim=`` header."""
    names = tuple(variable_names)
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line.startswith("#"):
                continue
            for token in line.lstrip("#").split():
                key, _, val = token.partition("=")
                if key == "dim" and dim is None:
                    dim = int(val)
                elif key == "variables" and not names:
                    names = tuple(v for v in val.split(",") if v)
    if dim is None:
        raise ValueError(f"{path}: dimension unknown (no '# dim=' header and none given)")
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.size == 0:
        raise ValueError(f"{path}: no particles")
    ncols = data.shape[1]
    if ncols <= 2 * dim:
        raise ValueError(f"{path}: {ncols} columns cannot hold dim={dim} positions, velocities and variables")
    return Ensemble(data[:, :dim], data[:, dim : 2 * dim], data[:, 2 * dim :], names)
