"""Simulation of a transmon-coupled bi-CPB chiral interface for waveguide QED."""
from .circuit import DeviceParams, ToleranceSpec, build_capacitance_matrix, charging_prefactor
from .hilbert import TruncationScheme, build_operator_set
from .spectrum import SpectralData, assemble_h_sys, diagonalize, solve_spectrum

__version__ = "0.1.0"

__all__ = [
    "DeviceParams", "ToleranceSpec", "TruncationScheme", "SpectralData",
    "build_capacitance_matrix", "charging_prefactor", "build_operator_set",
    "assemble_h_sys", "diagonalize", "solve_spectrum", "__version__",
]
