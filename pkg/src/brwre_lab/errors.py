"""Error taxonomy shared by all modules.

Every anticipated failure raises a LabError subclass so the service layer
and the CLI can map them to clean error responses instead of tracebacks.
"""

from __future__ import annotations


class LabError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(LabError):
    """A parameter value is outside its admissible range."""


class DomainError(LabError):
    """A structurally invalid request, e.g. an order/level mismatch."""


class CapacityError(LabError):
    """The request exceeds a guard rail (box size, tree level, population cap)."""


class StepSizeError(ParameterError):
    """An explicit integrator step violates its stability bound."""
