"""Laboratory for branching random walks in random environment.

Quenched moments of the particle count are computed by three independent
routes (direct branching simulation, a skeleton-tree Monte Carlo formula,
and a finite-box PDE solve), the Lyapunov correction constant is obtained
from a discrete variational problem, and the experiment harness
cross-validates the routes against each other.
"""

__version__ = "0.1.0"

from .errors import CapacityError, DomainError, LabError, ParameterError, StepSizeError

__all__ = [
    "__version__",
    "LabError",
    "ParameterError",
    "CapacityError",
    "DomainError",
    "StepSizeError",
]
