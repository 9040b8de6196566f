"""Usage control over a resource server through UMA 2.0 and ODRL policies."""

from .permissions import RequestedPermission

__all__ = ["RequestedPermission"]
__version__ = "0.1.0"
