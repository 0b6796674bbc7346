"""Lattice discretization of fractional harmonic maps into spheres."""
from .constants import FracParams, alpha_ns, delta_s, gamma_ns, sigma_ns
from .errors import (
    ConfigError,
    DomainError,
    FracmapError,
    InterpolationError,
    NumericalError,
    PreconditionError,
    ResourceError,
)
from .lattice import Lattice, build_lattice, preset_field, preset_function

__version__ = "0.1.0"
