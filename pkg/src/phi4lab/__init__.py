"""Numerical laboratory for the stochastic Phi^4_3 dynamics in transformed form.

Spectral torus grids, random coefficient synthesis, an exponential-Euler
solver, parabolic seminorms, coupling by change of measure and a
paraproduct bench, tied together by scenario runners and a CLI.
"""

from .errors import BlowUpError, ConfigurationError, DomainError, LabError, StateError
from .spectral import Field, FieldTrajectory, TorusGrid

__version__ = "0.1.0"

__all__ = ["BlowUpError", "ConfigurationError", "DomainError", "LabError", "StateError",
           "Field", "FieldTrajectory", "TorusGrid", "__version__"]
