"""Shared builders for smooth, stable test states."""

from __future__ import annotations

import numpy as np

from ehydro.espace import RiskGrid
from ehydro.hydro import HIERARCHY, CouplingSet, HydroState

# Every sign rule satisfied, modes pairwise distinct.
FULL_COUPLINGS = CouplingSet(
    a=0.5, b=0.3, c=-1.0, d=1.0, c_e=0.25, d_e=0.25, c_pe=-1.0, d_pe=2.25,
    c_v=-1.0, d_v=4.0, c_vu=0.01, d_vu=0.04, c_xv=0.01, d_xv=0.01,
)  # fmt: skip


def bump(x, center, width):
    return np.exp(-0.5 * ((x - center) / width) ** 2)


def smooth_state(cells: int, v_amp: float = 0.2, u_amp: float = 0.1, mode: str = HIERARCHY) -> HydroState:
    """Positive densities over a background with drift vanishing at the walls."""
    g = RiskGrid.uniform(1.0, cells)
    x = g.coords[0]
    A = 0.2 + bump(x, 0.45, 0.12)
    B = 0.2 + 0.8 * bump(x, 0.5, 0.12)
    v = v_amp * np.sin(np.pi * x)
    u = u_amp * np.sin(np.pi * x)
    return HydroState.from_primary(g, A, (A * v)[None], B, (B * u)[None], mode=mode)


def cfl_dt(cells: int, vmax: float, horizon: float, cfl: float = 0.5) -> tuple[float, int]:
    """Largest dt under the Courant limit that divides ``horizon`` evenly."""
    h = 1.0 / cells
    steps = int(np.ceil(horizon * vmax / (cfl * h)))
    return horizon / steps, steps
