"""Scattering-limited error budgets for 40Ca+ metastable-level qubits."""

from .angular import HalfInt, QuantumNumberError, clebsch_gordan, wigner3j
from .atomic import SpeciesData, SpeciesValidationError, Sublevel, default_species, load_species

__version__ = "0.1.0"

__all__ = [
    "HalfInt",
    "QuantumNumberError",
    "clebsch_gordan",
    "wigner3j",
    "SpeciesData",
    "SpeciesValidationError",
    "Sublevel",
    "default_species",
    "load_species",
    "__version__",
]
