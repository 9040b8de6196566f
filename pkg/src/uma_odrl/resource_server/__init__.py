"""UMA Resource Server.

Deliberately independent of the policy model and engine: every access
decision comes from the AS, as a signed RPT.
"""

from .app import ConfigError, ResourceServer, RSConfig, create_app
from .authorizer import ASClient, ASUnavailable, Authorized, Authorizer, Challenge, validate_rpt
from .mapping import MethodNotAllowed, compute_required_permissions, normalize_path, parent_of
from .storage import ResourceManager, StoredResource

__all__ = [
    "ASClient",
    "ASUnavailable",
    "Authorized",
    "Authorizer",
    "Challenge",
    "ConfigError",
    "MethodNotAllowed",
    "RSConfig",
    "ResourceManager",
    "ResourceServer",
    "StoredResource",
    "compute_required_permissions",
    "create_app",
    "normalize_path",
    "parent_of",
    "validate_rpt",
]
