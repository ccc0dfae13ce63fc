"""kinex: a laboratory for the uniform money-reshuffling dynamics.

Stochastic N-agent simulation (particle), the mean-field equation solver
(kinetic1d), the lifted two-variable dynamics (kinetic2d), the closed
moment hierarchy (moments), Laguerre spectral analysis of the linearized
flow (spectral), scalar convergence diagnostics (diagnostics), and
scripted end-to-end studies (experiments) behind one CLI (cli).
"""

from .errors import ConfigError, DataError, DomainError, KinexError, StabilityError
from .kinetic1d import Equilibrium, Grid1D, GridDensity1D, gain, rhs, solve, step_euler

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DomainError",
    "Equilibrium",
    "Grid1D",
    "GridDensity1D",
    "KinexError",
    "StabilityError",
    "gain",
    "rhs",
    "solve",
    "step_euler",
    "__version__",
]
