"""RPT checking and ticket requests.  The RS holds no policy state of its own.

The Authorizer works in three phases: the caller computes the required
permissions, the Authorizer validates the presented RPT against them, and if
that fails it asks the AS for a ticket covering exactly those permissions.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Dict, Mapping, Optional, Sequence, Union

import httpx
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from .. import tokens
from ..permissions import PermissionFormatError, RequestedPermission, covers, permissions_from_wire, permissions_to_wire

logger = logging.getLogger(__name__)

DISCOVERY_PATH = "/.well-known/uma2-configuration"


class ASUnavailable(Exception):
    """The AS could not be reached or answered unexpectedly; the RS fails closed."""

    status = 502


class InvalidRPT(Exception):
    pass


@dataclass(frozen=True)
class Authorized:
    webid: str
    permissions: tuple


@dataclass(frozen=True)
class Challenge:
    ticket: str
    as_uri: str

    def www_authenticate(self) -> str:
        return f'UMA realm="rs", as_uri="{self.as_uri}", ticket="{self.ticket}"'


class ASClient:
    """Talks to the AS: discovery, the verification key, and permission registration."""

    def __init__(self, as_uri: str, rs_secret: str, http: Optional[httpx.Client] = None, timeout: float = 5.0):
        self.as_uri = as_uri.rstrip("/")
        self.rs_secret = rs_secret
        self.http = http if http is not None else httpx.Client(timeout=timeout)
        self._lock = threading.Lock()
        self._config: Optional[Dict[str, Any]] = None
        self._key: Optional[Ed25519PublicKey] = None

    def _get_json(self, url: str) -> Any:
        try:
            resp = self.http.get(url)
        except httpx.HTTPError as exc:
            raise ASUnavailable(f"GET {url}: {exc}") from None
        if resp.status_code != 200:
            raise ASUnavailable(f"GET {url}: HTTP {resp.status_code}")
        try:
            return resp.json()
        except ValueError:
            raise ASUnavailable(f"GET {url}: body is not JSON") from None

    def discover(self) -> Dict[str, Any]:
        with self._lock:
            if self._config is None:
                config = self._get_json(self.as_uri + DISCOVERY_PATH)
                if not isinstance(config, dict) or str(config.get("issuer", "")).rstrip("/") != self.as_uri:
                    raise ASUnavailable(f"discovery document at {self.as_uri} names another issuer")
                for key in ("permission_endpoint", "jwks_uri"):
                    if not isinstance(config.get(key), str):
                        raise ASUnavailable(f"discovery document lacks {key}")
                self._config = config
            return self._config

    def verification_key(self) -> Ed25519PublicKey:
        if self._key is None:
            jwks = self._get_json(self.discover()["jwks_uri"])
            try:
                key = tokens.from_jwk(jwks["keys"][0])
            except (KeyError, IndexError, TypeError, ValueError, tokens.TokenError):
                raise ASUnavailable("jwks_uri did not yield an Ed25519 key") from None
            self._key = key
        return self._key

    def request_ticket(self, required: Sequence[RequestedPermission]) -> str:
        url = self.discover()["permission_endpoint"]
        try:
            resp = self.http.post(url, json=permissions_to_wire(required),
                                  headers={"Authorization": f"Bearer {self.rs_secret}"})
        except httpx.HTTPError as exc:
            raise ASUnavailable(f"POST {url}: {exc}") from None
        if resp.status_code != 201:
            raise ASUnavailable(f"POST {url}: HTTP {resp.status_code}")
        try:
            ticket = resp.json()["ticket"]
        except (ValueError, KeyError, TypeError):
            ticket = None
        if not isinstance(ticket, str) or not ticket:
            raise ASUnavailable("permission endpoint returned no ticket")
        return ticket


def bearer_token(headers: Mapping[str, str]) -> Optional[str]:
    value = headers.get("authorization") or headers.get("Authorization")
    if not value:
        return None
    scheme, _, token = value.partition(" ")
    if scheme.lower() != "bearer" or not token.strip():
        return None
    return token.strip()


def validate_rpt(token: str, key: Ed25519PublicKey, issuer: str, now: datetime) -> Authorized:
    """Authenticity and freshness of an RPT; raises InvalidRPT."""
    try:
        payload = tokens.verify_token(token, key)
    except tokens.TokenError as exc:
        raise InvalidRPT(str(exc)) from None
    if str(payload.get("iss", "")).rstrip("/") != issuer:
        raise InvalidRPT("RPT issued by another AS")
    exp = payload.get("exp")
    if isinstance(exp, bool) or not isinstance(exp, (int, float)) or not exp > now.timestamp():
        raise InvalidRPT("RPT expired")
    sub = payload.get("sub")
    if not isinstance(sub, str) or not sub:
        raise InvalidRPT("RPT has no subject")
    try:
        perms = permissions_from_wire(payload.get("permissions"))
    except (PermissionFormatError, ValueError) as exc:
        raise InvalidRPT(f"RPT permissions malformed: {exc}") from None
    return Authorized(sub, tuple(perms))


class Authorizer:
    def __init__(self, as_client: ASClient):
        self.as_client = as_client

    @property
    def as_uri(self) -> str:
        return self.as_client.as_uri

    def token_permissions(self, headers: Mapping[str, str], now: datetime) -> Optional[Authorized]:
        """The validated RPT from the request, or None when absent or invalid."""
        token = bearer_token(headers)
        if token is None:
            return None
        try:
            return validate_rpt(token, self.as_client.verification_key(), self.as_uri, now)
        except InvalidRPT as exc:
            logger.debug("rejecting RPT: %s", exc)
            return None

    def authorize(self, headers: Mapping[str, str], required: Sequence[RequestedPermission],
                  now: datetime, presented: Optional[Authorized] = None) -> Union[Authorized, Challenge]:
        if presented is None:
            presented = self.token_permissions(headers, now)
        if presented is not None and covers(presented.permissions, required):
            return presented
        return Challenge(self.as_client.request_ticket(required), self.as_uri)
