"""Numerical laboratory for the continuous homopolymer model H = Delta/2 + beta v."""
from .potentials import RadialField, RadialPotential, bump, unit_well

__version__ = "0.1.0"

__all__ = ["RadialField", "RadialPotential", "bump", "unit_well", "__version__"]
