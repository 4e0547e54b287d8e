"""Continuous-state branching processes with immigration: numerics and simulation."""
from .errors import (CBILabError, ConfigError, DomainError, NumericalError,
                     PopulationOverflowError)
from .laws import LawQuery
from .measures import (Density, ExponentialDensity, FiniteAtoms, StableDensity,
                       TruncatedStable, ZeroMeasure)
from .mechanisms import (NO_IMMIGRATION, BranchingMechanism, ImmigrationMechanism,
                         quadratic, single_atom, stable, stable_driver)
from .pathsim import PathConfig

__version__ = "0.1.0"

__all__ = [
    "CBILabError", "ConfigError", "DomainError", "NumericalError", "PopulationOverflowError",
    "LawQuery", "Density", "ExponentialDensity", "FiniteAtoms", "StableDensity",
    "TruncatedStable", "ZeroMeasure", "NO_IMMIGRATION", "BranchingMechanism",
    "ImmigrationMechanism", "quadratic", "single_atom", "stable", "stable_driver",
    "PathConfig", "__version__",
]
