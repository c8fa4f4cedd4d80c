"""Simulation and finite-dimensionality certification for reaction-diffusion-convection
systems ``u_t = D u_xx - u + f(x, u) u_x + g(x, u)`` on the unit circle."""

__version__ = "0.1.0"

from .grid import DiffusionMatrix, Grid, SpectralField, to_nodal, to_spectral  # noqa: E402
from .model import RDCSystem, builtin, eval_F, eval_G  # noqa: E402

__all__ = [
    "DiffusionMatrix", "Grid", "SpectralField", "to_nodal", "to_spectral",
    "RDCSystem", "builtin", "eval_F", "eval_G", "__version__",
]
