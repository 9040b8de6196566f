"""The (resource, access rights) tuple passed between RS, AS, tickets and tokens."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, List

READ = "read"
MODIFY = "modify"
CREATE = "create"
DELETE = "delete"
ACCESS_RIGHTS = (READ, MODIFY, CREATE, DELETE)


class PermissionFormatError(ValueError):
    """A wire-level permission list could not be decoded."""


@dataclass(frozen=True)
class RequestedPermission:
    resource: str
    access_rights: frozenset

    def __init__(self, resource: str, access_rights: Iterable[str]):
        rights = frozenset(access_rights)
        if not resource:
            raise ValueError("resource must be non-empty")
        if not rights or any(not isinstance(r, str) or not r for r in rights):
            raise ValueError("access_rights must be a non-empty set of non-empty strings")
        object.__setattr__(self, "resource", resource)
        object.__setattr__(self, "access_rights", rights)

    def to_wire(self) -> dict:
        return {"resource_id": self.resource, "resource_scopes": sorted(self.access_rights)}

    @classmethod
    def from_wire(cls, obj: Any) -> "RequestedPermission":
        if not isinstance(obj, dict):
            raise PermissionFormatError("permission entry must be an object")
        extra = set(obj) - {"resource_id", "resource_scopes"}
        if extra:
            raise PermissionFormatError(f"unknown permission field(s): {sorted(extra)}")
        resource = obj.get("resource_id")
        scopes = obj.get("resource_scopes")
        if not isinstance(resource, str) or not resource:
            raise PermissionFormatError("resource_id must be a non-empty string")
        if not isinstance(scopes, list) or not scopes or not all(isinstance(s, str) and s for s in scopes):
            raise PermissionFormatError("resource_scopes must be a non-empty list of strings")
        return cls(resource, scopes)


def permissions_to_wire(perms: Iterable[RequestedPermission]) -> List[dict]:
    return [p.to_wire() for p in perms]


def permissions_from_wire(obj: Any) -> List[RequestedPermission]:
    """Decode a permission list; a single bare object is accepted as a list of one."""
    if isinstance(obj, dict):
        obj = [obj]
    if not isinstance(obj, list):
        raise PermissionFormatError("permissions must be a list")
    return [RequestedPermission.from_wire(item) for item in obj]


def merge_permissions(perms: Iterable[RequestedPermission]) -> List[RequestedPermission]:
    """Union access rights per resource, ordered by resource."""
    merged: dict = {}
    for p in perms:
        merged.setdefault(p.resource, set()).update(p.access_rights)
    return [RequestedPermission(r, merged[r]) for r in sorted(merged)]


def covers(granted: Iterable[RequestedPermission], required: Iterable[RequestedPermission]) -> bool:
    """True when every required (resource, right) pair is present in ``granted``."""
    have: dict = {}
    for p in granted:
        have.setdefault(p.resource, set()).update(p.access_rights)
    return all(p.access_rights <= have.get(p.resource, set()) for p in required)
