"""Keyframe control of smoke simulations via ADMM spacetime optimization."""

from .fields import (GridSpec, ScalarField, StaggeredVectorField, NEUMANN,
                     PERIODIC, divergence, gradient, project_solenoidal)

__version__ = "0.1.0"

__all__ = [
    "GridSpec", "ScalarField", "StaggeredVectorField", "NEUMANN", "PERIODIC",
    "divergence", "gradient", "project_solenoidal", "__version__",
]
