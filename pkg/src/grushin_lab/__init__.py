"""Numerical laboratory for the Grushin-type operator -Lap_x - |x|^(2a) Lap_y:
heat and subordinated semigroups, fractional powers, potential operators,
metric geometry, Besov energies, nonlocal perimeters and embedding checks."""

from .grid import (
    Grid,
    GridFunction,
    GridSpec,
    SetMask,
    SetSpec,
    hom_dimension,
    integrate,
    lp_norm,
    rasterize,
)
from .operator import (
    GrushinOperator,
    SpectralData,
    assemble,
    eigendecompose,
    fractional_power_balakrishnan,
    fractional_power_spectral,
    riesz_potential,
    riesz_potential_quadrature,
)
from .quadrature import ConfigurationError, QuadratureSpec

__all__ = [
    "Grid",
    "GridFunction",
    "GridSpec",
    "SetMask",
    "SetSpec",
    "hom_dimension",
    "integrate",
    "lp_norm",
    "rasterize",
    "GrushinOperator",
    "SpectralData",
    "assemble",
    "eigendecompose",
    "fractional_power_balakrishnan",
    "fractional_power_spectral",
    "riesz_potential",
    "riesz_potential_quadrature",
    "ConfigurationError",
    "QuadratureSpec",
]

__version__ = "0.1.0"
