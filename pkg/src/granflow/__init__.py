"""Pressure-activated Bingham flow with pore-pressure coupling on staggered grids."""

from .fields import Grid, ScalarField, SymTensorField, VectorField
from .rheology import RheologyParams, SlipParams
from .solver import SimConfig, SimState, simulate

__all__ = ["Grid", "ScalarField", "VectorField", "SymTensorField", "RheologyParams", "SlipParams",
           "SimConfig", "SimState", "simulate"]
