"""Deterministic solvers for the homogeneous Boltzmann and Landau equations with
numerical audits of Fisher-information estimates."""

__version__ = "0.1.0"

from ._backend import backend, set_backend
from .grid import Distribution, VelocityGrid, make_grid, maxwellian

__all__ = ["__version__", "backend", "set_backend", "Distribution", "VelocityGrid", "make_grid", "maxwellian"]
