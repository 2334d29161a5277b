"""HTTP facade over the laboratory core.

create_app() builds the FastAPI application; every route is a thin
serialization shim over one core function, so results are identical to
calling the package directly.
"""

from .app import create_app

__all__ = ["create_app"]
