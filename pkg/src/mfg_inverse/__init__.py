"""Mean field game forward solver and boundary-data reconstruction of the
kinetic Hamiltonian coefficient and the running cost."""

from .grid import Grid, SpaceTimeField, SpatialField, make_grid
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "Grid", "SpaceTimeField", "SpatialField", "make_grid"]
