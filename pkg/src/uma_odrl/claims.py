"""Claim token verification, keyed on ``claim_token_format``.

The only built-in format is ``urn:uma-odrl:claims:idtoken``: a compact
Ed25519 token (see :mod:`uma_odrl.tokens`) whose payload has ``iss``,
``exp`` (seconds since the epoch) and ``webid``.  Any other payload claim,
``purpose`` for instance, lands in ``VerifiedClaims.context``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Dict, Mapping, Optional, Union
from urllib.parse import urlsplit

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from . import tokens

IDTOKEN_FORMAT = "urn:uma-odrl:claims:idtoken"

# Claims that describe the token itself rather than the requesting party.
RESERVED_CLAIMS = frozenset({"iss", "exp", "webid", "iat", "nbf", "sub", "aud", "jti"})


class ClaimError(Exception):
    """Base class; every subclass maps to an AS ``need_info`` response."""


class UnsupportedFormat(ClaimError):
    pass


class UnknownIssuer(ClaimError):
    pass


class BadSignature(ClaimError):
    pass


class Expired(ClaimError):
    pass


class MissingWebid(ClaimError):
    pass


@dataclass(frozen=True)
class ClaimToken:
    raw: str
    format: str = IDTOKEN_FORMAT

    def __post_init__(self):
        if self.raw and not self.format:
            raise ValueError("claim token format is required")


@dataclass(frozen=True)
class VerifiedClaims:
    webid: str
    issuer: str
    context: Mapping[str, Any] = field(default_factory=dict)
    verified_at: Optional[datetime] = None


class IssuerRegistry:
    """Trusted issuer IRI to Ed25519 public key; entries cannot be replaced."""

    def __init__(self, trusted: Optional[Mapping[str, Ed25519PublicKey]] = None):
        self._trusted: Dict[str, Ed25519PublicKey] = {}
        for issuer, key in (trusted or {}).items():
            self.register(issuer, key)

    def register(self, issuer: str, key: Union[Ed25519PublicKey, Ed25519PrivateKey, str]) -> None:
        if isinstance(key, str):
            key = tokens.public_key_from_hex(key)
        elif isinstance(key, Ed25519PrivateKey):
            key = key.public_key()
        if issuer in self._trusted:
            if tokens.public_key_bytes(self._trusted[issuer]) != tokens.public_key_bytes(key):
                raise ValueError(f"issuer {issuer!r} is already registered with another key")
            return
        self._trusted[issuer] = key

    def get(self, issuer: str) -> Optional[Ed25519PublicKey]:
        return self._trusted.get(issuer)

    @property
    def trusted(self) -> Mapping[str, Ed25519PublicKey]:
        return MappingProxyType(self._trusted)

    def __contains__(self, issuer: str) -> bool:
        return issuer in self._trusted

    @classmethod
    def load(cls, path: Union[str, Path]) -> "IssuerRegistry":
        """Read ``[{"issuer": IRI, "public_key": hex}, ...]`` (or ``{"issuers": [...]}``)."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, dict):
            data = data.get("issuers", [])
        registry = cls()
        for entry in data:
            registry.register(entry["issuer"], entry["public_key"])
        return registry

    def to_json(self) -> list:
        return [{"issuer": iss, "public_key": tokens.public_key_hex(key)}
                for iss, key in sorted(self._trusted.items())]


def is_iri(value: Any) -> bool:
    if not isinstance(value, str) or not value or any(c.isspace() for c in value):
        return False
    parts = urlsplit(value)
    return bool(parts.scheme) and bool(parts.netloc or parts.path)


def _epoch(now: datetime) -> float:
    return now.timestamp()


def verify_idtoken(raw: str, registry: IssuerRegistry, now: datetime) -> VerifiedClaims:
    try:
        _, unverified = tokens.decode_unverified(raw)
    except tokens.MalformedToken as exc:
        raise BadSignature(str(exc)) from None
    issuer = unverified.get("iss")
    key = registry.get(issuer) if isinstance(issuer, str) else None
    if key is None:
        raise UnknownIssuer(f"issuer {issuer!r} is not trusted")
    try:
        payload = tokens.verify_token(raw, key)
    except tokens.TokenError as exc:
        raise BadSignature(str(exc)) from None
    exp = payload.get("exp")
    if isinstance(exp, bool) or not isinstance(exp, (int, float)) or not exp > _epoch(now):
        raise Expired("claim token expired")
    webid = payload.get("webid")
    if not is_iri(webid):
        raise MissingWebid("claim token carries no valid webid")
    context = {k: v for k, v in payload.items() if k not in RESERVED_CLAIMS}
    return VerifiedClaims(webid=webid, issuer=issuer, context=context, verified_at=now)


Verifier = Callable[[str, IssuerRegistry, datetime], VerifiedClaims]

VERIFIERS: Dict[str, Verifier] = {IDTOKEN_FORMAT: verify_idtoken}


def verify(token: ClaimToken, registry: IssuerRegistry, now: datetime,
           verifiers: Optional[Mapping[str, Verifier]] = None) -> VerifiedClaims:
    """Dispatch on the token format; raises a ClaimError subclass on any failure."""
    table = VERIFIERS if verifiers is None else verifiers
    verifier = table.get(token.format)
    if verifier is None:
        raise UnsupportedFormat(f"unsupported claim_token_format {token.format!r}")
    return verifier(token.raw, registry, now)


def mint_test_token(webid: str, issuer: str, key: Ed25519PrivateKey,
                    claims: Optional[Mapping[str, Any]] = None, exp: Union[int, datetime] = 0) -> ClaimToken:
    """Sign an id token the way an identity provider would; for tests and the CLI."""
    if isinstance(exp, datetime):
        exp = int(exp.timestamp())
    payload: Dict[str, Any] = dict(claims or {})
    payload.update({"iss": issuer, "exp": int(exp)})
    if webid:
        payload["webid"] = webid
    return ClaimToken(tokens.encode_token(payload, key), IDTOKEN_FORMAT)


def utcnow() -> datetime:
    return datetime.now(timezone.utc)
