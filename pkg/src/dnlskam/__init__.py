"""Quasi-periodic solutions of the derivative nonlinear Schrödinger equation:
Fourier-Taylor series algebra, order-four normal form, frequency maps,
Diophantine conditions, a numerical KAM iteration and a pseudo-spectral
simulator."""

from .errors import (AdmissionError, BlowUpError, ConfigurationError, ContractError, DnlsKamError, DomainError,
                     InvariantViolation, ResonanceError, StructuralError)
from .ft_algebra import FTSeries, ModeLattice, poisson_bracket

__version__ = "0.1.0"

__all__ = [
    "AdmissionError", "BlowUpError", "ConfigurationError", "ContractError", "DnlsKamError", "DomainError",
    "FTSeries", "InvariantViolation", "ModeLattice", "ResonanceError", "StructuralError", "poisson_bracket",
]
