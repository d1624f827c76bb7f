"""Onsager-Machlup functionals for diffusions with time-dependent metrics.

Modules:

- geometry: metric families, curvature, built-in examples
- transport: time-coupled parallel transport, normal coordinates
- lagrangian: the Onsager-Machlup Lagrangian, actions, weighted variants
- mpp: most probable paths (Euler-Lagrange BVP and direct minimization)
- sde: Euler-Maruyama simulation and small-ball probabilities
- cli: command-line front end
"""

from .errors import OmflowError

__version__ = "0.1.0"

__all__ = ["OmflowError", "__version__"]
