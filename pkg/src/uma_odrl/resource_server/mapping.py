"""Translate an HTTP operation on a path into the permissions it requires."""

from __future__ import annotations

import re
import uuid
from typing import List, Optional

from ..permissions import CREATE, DELETE, MODIFY, READ, RequestedPermission

SUPPORTED_METHODS = ("GET", "HEAD", "PUT", "POST", "PATCH", "DELETE")

# One path segment: unreserved and sub-delim characters, never starting with '.'
# (dot-names are reserved for storage metadata and temp files).
_SEGMENT = re.compile(r"^[A-Za-z0-9_~!$&'()*+,;=:@-][A-Za-z0-9._~!$&'()*+,;=:@-]*$")


class MethodNotAllowed(Exception):
    status = 405


class InvalidPath(ValueError):
    status = 400


def normalize_path(path: str) -> str:
    """Validate a resource path; containers end with '/', documents do not."""
    if not path.startswith("/"):
        raise InvalidPath("path must be absolute")
    if path == "/":
        return path
    body = path[1:-1] if path.endswith("/") else path[1:]
    for segment in body.split("/"):
        if not _SEGMENT.match(segment):
            raise InvalidPath(f"invalid path segment {segment!r}")
    return path


def is_container(path: str) -> bool:
    return path.endswith("/")


def parent_of(path: str) -> str:
    if path == "/":
        raise InvalidPath("the root container has no parent")
    stripped = path[:-1] if path.endswith("/") else path
    return stripped[: stripped.rfind("/") + 1]


def is_valid_child_name(name: str) -> bool:
    return bool(_SEGMENT.match(name))


def new_child_name() -> str:
    return str(uuid.uuid4())


def compute_required_permissions(method: str, path: str, *, exists: bool = False, base_url: str = "",
                                 child: Optional[str] = None) -> List[RequestedPermission]:
    """Required (resource IRI, rights) for ``method`` on ``path``.

    ``exists`` only matters for PUT.  For POST, ``child`` is the name of the
    member about to be created (minted when not given).  Resource IRIs are
    ``base_url + path``.
    """
    method = method.upper()
    path = normalize_path(path)
    base = base_url.rstrip("/")

    def perm(p: str, right: str) -> RequestedPermission:
        return RequestedPermission(base + p, {right})

    if method in ("GET", "HEAD"):
        return [perm(path, READ)]
    if method == "PATCH":
        return [perm(path, MODIFY)]
    if method == "PUT":
        if path == "/" or exists:
            return [perm(path, MODIFY)]
        return [perm(path, CREATE), perm(parent_of(path), MODIFY)]
    if method == "POST":
        if not is_container(path):
            raise MethodNotAllowed("POST is only allowed on containers")
        name = child or new_child_name()
        if not is_valid_child_name(name):
            raise InvalidPath(f"invalid child name {name!r}")
        return [perm(path, MODIFY), perm(path + name, CREATE)]
    if method == "DELETE":
        if path == "/":
            raise MethodNotAllowed("the root container cannot be deleted")
        return [perm(path, DELETE), perm(parent_of(path), MODIFY)]
    raise MethodNotAllowed(f"method {method} not allowed")
