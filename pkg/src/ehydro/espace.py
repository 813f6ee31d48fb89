"""Bounded risk-rating space, its uniform grid, and discrete calculus.

Values live at cell centres of a uniform Cartesian grid covering the box
``0 < x_i < X_i``.  Scalar fields have shape ``grid.shape``; vector fields
have shape ``(dim, *grid.shape)`` with the component index first.

All flux divergences use zero normal flux on the outer faces, so the sum of a
divergence over the grid telescopes to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class RiskDomain:
    """Box of risk coordinates with upper bounds ``X_1 .. X_n``."""

    upper_bounds: tuple[float, ...]

    def __post_init__(self) -> None:
        bounds = tuple(float(b) for b in np.atleast_1d(self.upper_bounds))
        if len(bounds) < 1:
            raise ValueError("domain needs at least one risk axis")
        if not all(np.isfinite(b) and b > 0.0 for b in bounds):
            raise ValueError(f"upper bounds must be finite and positive, got {bounds}")
        object.__setattr__(self, "upper_bounds", bounds)

    @property
    def dim(self) -> int:
        return len(self.upper_bounds)

    def contains(self, points: FloatArray) -> NDArray[np.bool_]:
        """Mask of points (shape ``(N, dim)``) strictly inside the box."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        upper = np.asarray(self.upper_bounds)
        return np.all((pts > 0.0) & (pts < upper), axis=1)


@dataclass(frozen=True)
class RiskGrid:
    """Uniform cell-centred discretisation of a :class:`RiskDomain`."""

    domain: RiskDomain
    cells: tuple[int, ...]

    def __post_init__(self) -> None:
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        if len(cells) != self.domain.dim:
            raise ValueError(
                f"need one cell count per axis: dim={self.domain.dim}, got {cells}"
            )
        if any(c < 1 for c in cells):
            raise ValueError(f"cell counts must be positive, got {cells}")
        object.__setattr__(self, "cells", cells)

    @classmethod
    def uniform(cls, upper_bounds: Sequence[float] | float, cells: Sequence[int] | int) -> RiskGrid:
        bounds = tuple(np.atleast_1d(upper_bounds).astype(float))
        counts = np.atleast_1d(cells).astype(int)
        if counts.size == 1 and len(bounds) > 1:
            counts = np.repeat(counts, len(bounds))
        return cls(RiskDomain(bounds), tuple(int(c) for c in counts))

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple(X / c for X, c in zip(self.domain.upper_bounds, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def centers(self) -> tuple[FloatArray, ...]:
        """Per-axis 1-D arrays of cell-centre coordinates."""
        return tuple((np.arange(c) + 0.5) * h for c, h in zip(self.cells, self.spacing))

    @cached_property
    def coords(self) -> FloatArray:
        """Cell-centre coordinates as a vector field, shape ``(dim, *shape)``."""
        mesh = np.meshgrid(*self.centers, indexing="ij")
        out = np.stack(mesh)
        out.setflags(write=False)
        return out

    @cached_property
    def radius2(self) -> FloatArray:
        """``|x|^2`` at every cell centre."""
        out = np.sum(self.coords**2, axis=0)
        out.setflags(write=False)
        return out

    def refined(self, factor: int = 2) -> RiskGrid:
        return RiskGrid(self.domain, tuple(c * factor for c in self.cells))

    # -- quadratures ---------------------------------------------------------

    def integrate(self, values: FloatArray) -> float | FloatArray:
        """Midpoint-rule integral; vector fields integrate componentwise."""
        values = np.asarray(values, dtype=float)
        axes = tuple(range(values.ndim - self.dim, values.ndim))
        out = values.sum(axis=axes) * self.cell_volume
        return float(out) if np.ndim(out) == 0 else out

    def first_moment(self, values: FloatArray) -> FloatArray:
        """``∫ x f dx`` for a scalar field, returned as a ``dim``-vector."""
        values = self._scalar(values)
        return np.array([self.integrate(self.coords[k] * values) for k in range(self.dim)])

    def second_moment(self, values: FloatArray) -> float:
        """``∫ |x|^2 f dx`` for a scalar field."""
        return self.integrate(self.radius2 * self._scalar(values))

    # -- flux divergence -----------------------------------------------------

    def flux_divergence(self, face_fluxes: Sequence[FloatArray]) -> FloatArray:
        """Cell divergence from interior face fluxes.

        ``face_fluxes[k]`` holds the fluxes through the interior faces normal
        to axis ``k``; its axis ``-dim + k`` is one shorter than the grid.
        Leading axes (several fields stacked) are carried through.
        """
        out = None
        for k, (flux, h) in enumerate(zip(face_fluxes, self.spacing)):
            axis = flux.ndim - self.dim + k
            shape = list(flux.shape)
            shape[axis] += 1
            # boundary faces carry zero flux
            term = np.zeros(shape)
            right = [slice(None)] * flux.ndim
            left = [slice(None)] * flux.ndim
            right[axis] = slice(None, -1)
            left[axis] = slice(1, None)
            term[tuple(right)] += flux
            term[tuple(left)] -= flux
            term /= h
            out = term if out is None else out + term
        return out

    def divergence(self, vector: FloatArray) -> FloatArray:
        """Upwinded finite-volume divergence of a vector field.

        Face flux along axis ``k`` takes the value of component ``k`` from the
        cell upwind of the face, the wind being the mean of the two adjacent
        cell values.  Outer faces carry no flux.
        """
        vector = self._vector(vector)
        fluxes = []
        for k in range(self.dim):
            comp = vector[k]
            left, right = _neighbours(comp, k)
            wind = 0.5 * (left + right)
            fluxes.append(np.where(wind > 0.0, left, right))
        return self.flux_divergence(fluxes)

    def upwind_fluxes(self, values: FloatArray, velocity: FloatArray) -> list[FloatArray]:
        """Face fluxes ``v_face * f_upwind`` for first-order upwind transport.

        ``values`` may carry leading axes (stacked fields).  ``velocity`` has
        shape ``(..., dim, *grid.shape)``; after taking component ``k`` it must
        broadcast against ``values``.
        """
        fluxes = []
        for k in range(self.dim):
            vk = np.take(velocity, k, axis=velocity.ndim - self.dim - 1)
            vl, vr = _neighbours(vk, vk.ndim - self.dim + k)
            v_face = 0.5 * (vl + vr)
            fl, fr = _neighbours(values, values.ndim - self.dim + k)
            fluxes.append(v_face * np.where(v_face > 0.0, fl, fr))
        return fluxes

    # -- helpers -------------------------------------------------------------

    def _scalar(self, values: FloatArray) -> FloatArray:
        values = np.asarray(values, dtype=float)
        if values.shape != self.shape:
            raise ValueError(f"expected scalar field of shape {self.shape}, got {values.shape}")
        return values

    def _vector(self, values: FloatArray) -> FloatArray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.dim, *self.shape):
            raise ValueError(
                f"expected vector field of shape {(self.dim, *self.shape)}, got {values.shape}"
            )
        return values


def _neighbours(a: FloatArray, axis: int) -> tuple[FloatArray, FloatArray]:
    """Views of the cells on the low and high side of every interior face."""
    lo = [slice(None)] * a.ndim
    hi = [slice(None)] * a.ndim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    return a[tuple(lo)], a[tuple(hi)]


@dataclass
class Field:
    """Scalar or vector quantity sampled once per grid cell."""

    grid: RiskGrid
    values: FloatArray
    name: str = ""
    density: bool = field(default=False, kw_only=True)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape == self.grid.shape:
            self.rank = 0
        elif self.values.shape == (self.grid.dim, *self.grid.shape):
            self.rank = 1
        else:
            raise ValueError(
                f"field {self.name!r}: shape {self.values.shape} matches neither "
                f"{self.grid.shape} nor {(self.grid.dim, *self.grid.shape)}"
            )
        if self.density and np.any(self.values < 0.0):
            raise ValueError(f"density field {self.name!r} has negative cells")

    @property
    def is_vector(self) -> bool:
        return self.rank == 1

    def __add__(self, other: Field) -> Field:
        return Field(self.grid, self.values + other.values, self.name)

    def __mul__(self, scale: float) -> Field:
        return Field(self.grid, self.values * scale, self.name)

    __rmul__ = __mul__


def integrate(f: Field) -> float | FloatArray:
    """Midpoint-rule integral of a field over the domain."""
    return f.grid.integrate(f.values)


def first_moment(f: Field) -> FloatArray:
    return f.grid.first_moment(f.values)


def second_moment(f: Field) -> float:
    return f.grid.second_moment(f.values)


def divergence(F: Field) -> Field:
    if not F.is_vector:
        raise ValueError("divergence needs a vector field")
    return Field(F.grid, F.grid.divergence(F.values), f"div({F.name})")
