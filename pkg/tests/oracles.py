"""Brute-force reference evaluators, written without the engine's code paths.

Policies are consumed through their canonical JSON (``policy_to_json``) so
nothing here touches the engine's model helpers; timestamps are compared as
integer microseconds since the epoch.
"""

from __future__ import annotations

import re
from datetime import datetime, timezone

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_AUTHORITY = re.compile(r"^([A-Za-z][A-Za-z0-9+.-]*)://([^/?#]*)(.*)$", re.S)


def micros(ts: str) -> int:
    """'2026-01-01T00:00:00[.ffffff]Z' to microseconds since the epoch, by hand."""
    m = re.match(r"^(\d{4})-(\d\d)-(\d\d)T(\d\d):(\d\d):(\d\d)(?:\.(\d{1,6}))?Z$", ts)
    assert m, ts
    y, mo, d, h, mi, s = (int(x) for x in m.groups()[:6])
    frac = int((m.group(7) or "0").ljust(6, "0"))
    days = (datetime(y, mo, d, tzinfo=timezone.utc) - _EPOCH).days
    return ((days * 24 + h) * 60 + mi) * 60_000_000 + s * 1_000_000 + frac


def dt_micros(dt: datetime) -> int:
    delta = dt - _EPOCH
    return (delta.days * 86400 + delta.seconds) * 1_000_000 + delta.microseconds


def norm_iri(iri: str) -> str:
    m = _AUTHORITY.match(iri)
    if not m:
        return iri
    scheme, authority, rest = m.group(1).lower(), m.group(2), m.group(3)
    userinfo = ""
    if "@" in authority:
        userinfo, authority = authority.rsplit("@", 1)
        userinfo += "@"
    host, port = authority, ""
    pm = re.match(r"^(.*):(\d*)$", authority)
    if pm and not authority.endswith("]"):
        host, port = pm.group(1), pm.group(2)
    host = host.lower()
    if port in ("", {"http": "80", "https": "443"}.get(scheme)):
        port = ""
    return f"{scheme}://{userinfo}{host}{':' + port if port else ''}{rest}"


def constraint_holds(constraint: dict, now: datetime, context: dict) -> bool:
    """Naive operator table over a canonical-JSON constraint."""
    left, op, right = constraint["leftOperand"], constraint["operator"], constraint["rightOperand"]
    if left == "dateTime":
        value = dt_micros(now)
        rights = [micros(r["@value"]) for r in right] if isinstance(right, list) else micros(right["@value"])
    elif left == "purpose":
        value = context.get("purpose")
        if not isinstance(value, str) or value == "":
            return False
        rights = right
    else:
        return False
    table = {
        "eq": lambda: value == rights,
        "neq": lambda: value != rights,
        "lt": lambda: value < rights,
        "lteq": lambda: value <= rights,
        "gt": lambda: value > rights,
        "gteq": lambda: value >= rights,
        "isAnyOf": lambda: value in rights,
    }
    return table[op]()


def brute_force_decision(policy_docs, webid: str, context: dict, requested, now: datetime):
    """Granted pairs and denial reasons by enumerating every rule for every pair.

    ``policy_docs`` are canonical policy JSON dicts; ``requested`` is a list of
    (resource, [rights]).
    """
    granted, denied = set(), {}
    for resource, rights in requested:
        for action in rights:
            active_perm = active_prohib = False
            for doc in policy_docs:
                for kind in ("permission", "prohibition"):
                    for rule in doc.get(kind, []):
                        if norm_iri(rule["target"]) != norm_iri(resource):
                            continue
                        ok = rule["action"] == action
                        ok = ok and rule.get("assignee") in (None, webid)
                        for c in rule.get("constraint", []):
                            ok = ok and constraint_holds(c, now, context)
                        if ok and kind == "permission":
                            active_perm = True
                        if ok and kind == "prohibition":
                            active_prohib = True
            if active_prohib:
                denied[(resource, action)] = "ProhibitionOverride"
            elif active_perm:
                granted.add((resource, action))
            else:
                denied[(resource, action)] = "NoActiveRule"
    return granted, denied


def required_pairs(method: str, path: str, existed: bool, child: str = "") -> set:
    """(path, right) pairs an RS request needs, written straight from the mapping table."""
    def parent(p):
        trimmed = p[:-1] if p.endswith("/") else p
        return trimmed[: trimmed.rfind("/") + 1]

    if method in ("GET", "HEAD"):
        return {(path, "read")}
    if method == "PATCH":
        return {(path, "modify")}
    if method == "PUT":
        return {(path, "modify")} if existed or path == "/" else {(path, "create"), (parent(path), "modify")}
    if method == "POST":
        return {(path, "modify"), (path + child, "create")}
    if method == "DELETE":
        return {(path, "delete"), (parent(path), "modify")}
    raise ValueError(method)
