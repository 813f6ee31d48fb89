"""Hydrodynamic model of assets and revenue flowing through risk space.

Modules, bottom up:

* :mod:`ehydro.espace` - the bounded risk domain, its grid and discrete calculus
* :mod:`ehydro.kinetic` - agent ensembles and their deposition onto the grid
* :mod:`ehydro.hydro` - coupled transport equations for densities and impulses
* :mod:`ehydro.aggregates` - domain integrals, risk moments and identity checks
* :mod:`ehydro.odesys` - the linear ODE systems the aggregates obey
* :mod:`ehydro.analysis` - frequency, growth and basis-fit extraction
* :mod:`ehydro.cli` - scenario files and the ``ehydro`` command
"""

from .aggregates import AggregateRecord, AggregateSeries, identity_residuals, measure, probability_view
from .analysis import ModeFit, fit_modes, growth_rate, spectrum
from .espace import Field, RiskDomain, RiskGrid
from .hydro import CouplingSet, HydroState, StepConfig, simulate, step
from .kinetic import Ensemble, EParticle, deposit
from .odesys import LinearSystem, build, closed_form, integrate_ode, modes

__all__ = [
    "AggregateRecord",
    "AggregateSeries",
    "CouplingSet",
    "EParticle",
    "Ensemble",
    "Field",
    "HydroState",
    "LinearSystem",
    "ModeFit",
    "RiskDomain",
    "RiskGrid",
    "StepConfig",
    "build",
    "closed_form",
    "deposit",
    "fit_modes",
    "growth_rate",
    "identity_residuals",
    "integrate_ode",
    "measure",
    "modes",
    "probability_view",
    "simulate",
    "spectrum",
    "step",
]
