"""UMA 2.0 Authorization Server.

``AuthorizationServer`` holds the logic and is independent of HTTP;
``create_app`` wraps it in a FastAPI application exposing::

    GET  /.well-known/uma2-configuration
    GET  /keys
    POST /permission        (RS only, bearer secret)
    POST /token
    GET  /healthz

A token request runs four steps in order: parse the request, determine the
requested permissions (ticket or direct ``permissions``), verify the claim
token, then assess the permissions against the ODRL policies.
"""

from __future__ import annotations

import hmac
import json
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union
from urllib.parse import parse_qsl

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from . import claims as claimlib
from . import engine, tokens
from .permissions import PermissionFormatError, RequestedPermission, permissions_from_wire, permissions_to_wire
from .store import PolicyStore, store_load
from .tickets import DEFAULT_TICKET_TTL, TicketError, TicketManager

logger = logging.getLogger(__name__)

UMA_GRANT_TYPE = "urn:ietf:params:oauth:grant-type:uma-ticket"
DISCOVERY_PATH = "/.well-known/uma2-configuration"
DEFAULT_RPT_TTL = timedelta(seconds=600)

Clock = Callable[[], datetime]


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


class ConfigError(Exception):
    pass


@dataclass
class ASConfig:
    issuer: str
    signing_key: Path
    issuer_registry: Path
    policy_store: Path
    rs_secret: str
    listen: str = "127.0.0.1:8180"
    rpt_ttl: int = 600
    ticket_ttl: int = 300

    @classmethod
    def load(cls, path: Union[str, Path], env: Optional[Mapping[str, str]] = None) -> "ASConfig":
        """Read the JSON config; relative paths resolve against the config file's directory.

        ``UMA_ODRL_AS_LISTEN`` and ``UMA_ODRL_AS_SECRET`` override the file.
        """
        env = os.environ if env is None else env
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read AS config {path}: {exc}") from None
        base = path.parent
        try:
            cfg = cls(
                issuer=data["issuer"].rstrip("/"),
                signing_key=base / data["signing_key"],
                issuer_registry=base / data["issuer_registry"],
                policy_store=base / data["policy_store"],
                rs_secret=data.get("rs_secret", ""),
                listen=data.get("listen", cls.listen),
                rpt_ttl=int(data.get("rpt_ttl", cls.rpt_ttl)),
                ticket_ttl=int(data.get("ticket_ttl", cls.ticket_ttl)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid AS config {path}: missing or bad field {exc}") from None
        cfg.listen = env.get("UMA_ODRL_AS_LISTEN", cfg.listen)
        cfg.rs_secret = env.get("UMA_ODRL_AS_SECRET", cfg.rs_secret)
        if not cfg.rs_secret:
            raise ConfigError("rs_secret must be set (config or UMA_ODRL_AS_SECRET)")
        if cfg.rpt_ttl <= 0 or cfg.ticket_ttl <= 0:
            raise ConfigError("rpt_ttl and ticket_ttl must be positive")
        return cfg


@dataclass
class Response:
    status: int
    body: Dict[str, Any]
    headers: Dict[str, str] = field(default_factory=dict)


def _oauth_error(status: int, code: str, description: Optional[str] = None, **extra: Any) -> Response:
    body: Dict[str, Any] = {"error": code}
    if description:
        body["error_description"] = description
    body.update(extra)
    return Response(status, body, {"Cache-Control": "no-store"})


_CLAIM_ERROR_TEXT = {
    claimlib.UnsupportedFormat: "unsupported claim_token_format",
    claimlib.UnknownIssuer: "claim token issuer is not trusted",
    claimlib.BadSignature: "claim token signature is invalid",
    claimlib.Expired: "claim token expired",
    claimlib.MissingWebid: "claim token carries no webid",
}


class AuthorizationServer:
    def __init__(
        self,
        issuer: str,
        signing_key: Ed25519PrivateKey,
        registry: claimlib.IssuerRegistry,
        policies: PolicyStore,
        rs_secret: str,
        *,
        rpt_ttl: timedelta = DEFAULT_RPT_TTL,
        ticket_ttl: timedelta = DEFAULT_TICKET_TTL,
        clock: Clock = utcnow,
        strategies=engine.DEFAULT_STRATEGIES,
    ):
        self.issuer = issuer.rstrip("/")
        self.signing_key = signing_key
        self.registry = registry
        self.policies = policies
        self.rs_secret = rs_secret
        self.rpt_ttl = rpt_ttl
        self.tickets = TicketManager(ticket_ttl)
        self.clock = clock
        self.strategies = frozenset(strategies)
        self._issued = 0

    @classmethod
    def from_config(cls, cfg: ASConfig, clock: Clock = utcnow) -> "AuthorizationServer":
        try:
            key = tokens.load_private_key(cfg.signing_key)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load signing key {cfg.signing_key}: {exc}") from None
        try:
            registry = claimlib.IssuerRegistry.load(cfg.issuer_registry)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot load issuer registry {cfg.issuer_registry}: {exc}") from None
        try:
            store = store_load(cfg.policy_store)
        except Exception as exc:
            raise ConfigError(f"cannot load policy store {cfg.policy_store}: {exc}") from None
        return cls(cfg.issuer, key, registry, store, cfg.rs_secret,
                   rpt_ttl=timedelta(seconds=cfg.rpt_ttl), ticket_ttl=timedelta(seconds=cfg.ticket_ttl),
                   clock=clock)

    # -- discovery ---------------------------------------------------------

    def endpoint(self, path: str) -> str:
        return self.issuer + path

    def discovery(self) -> Dict[str, Any]:
        return {
            "issuer": self.issuer,
            "token_endpoint": self.endpoint("/token"),
            "permission_endpoint": self.endpoint("/permission"),
            "jwks_uri": self.endpoint("/keys"),
            "claim_token_formats_supported": sorted(claimlib.VERIFIERS),
        }

    def jwks(self) -> Dict[str, Any]:
        return {"keys": [tokens.to_jwk(self.signing_key)]}

    # -- tickets -----------------------------------------------------------

    def _issue_ticket(self, requested: List[RequestedPermission], now: datetime) -> str:
        self._issued += 1
        if self._issued % 256 == 0:
            self.tickets.purge(now)
        return self.tickets.issue(requested, now).ticket

    def register_permissions(self, authorization: Optional[str], body: Any) -> Response:
        scheme, _, secret = (authorization or "").partition(" ")
        if scheme.lower() != "bearer" or not hmac.compare_digest(secret.strip().encode(), self.rs_secret.encode()):
            return Response(401, {"error": "invalid_token"}, {"WWW-Authenticate": 'Bearer realm="uma-as"'})
        try:
            requested = permissions_from_wire(body)
        except (PermissionFormatError, ValueError) as exc:
            return _oauth_error(400, "invalid_request", str(exc))
        if not requested:
            return _oauth_error(400, "invalid_request", "permission list is empty")
        return Response(201, {"ticket": self._issue_ticket(requested, self.clock())})

    # -- token -------------------------------------------------------------

    def sign_rpt(self, decision: engine.Decision, verified: claimlib.VerifiedClaims, now: datetime) -> str:
        if not decision.granted:
            raise ValueError("refusing to sign an RPT without granted permissions")
        iat = int(now.timestamp())
        payload = {
            "iss": self.issuer,
            "sub": verified.webid,
            "permissions": permissions_to_wire(decision.granted_permissions()),
            "iat": iat,
            "exp": iat + int(self.rpt_ttl.total_seconds()),
        }
        return tokens.encode_token(payload, self.signing_key)

    def _need_info(self, requested: List[RequestedPermission], now: datetime, why: str) -> Response:
        return _oauth_error(
            403, "need_info", why,
            ticket=self._issue_ticket(requested, now),
            required_claims=[{"claim_token_format": sorted(claimlib.VERIFIERS)}],
        )

    def handle_token(self, form: Mapping[str, Any]) -> Response:
        now = self.clock()

        # 1. parse
        if form.get("grant_type") != UMA_GRANT_TYPE:
            return _oauth_error(400, "invalid_grant", "grant_type must be " + UMA_GRANT_TYPE)
        ticket = form.get("ticket")
        raw_perms = form.get("permissions")
        has_ticket = ticket not in (None, "")
        has_perms = raw_perms not in (None, "", [])
        if has_ticket == has_perms:
            return _oauth_error(400, "invalid_grant", "exactly one of ticket and permissions is required")
        raw_token = form.get("claim_token")
        token_format = form.get("claim_token_format")
        if raw_token and not token_format:
            return _oauth_error(400, "invalid_request", "claim_token_format is required with claim_token")
        if any(v is not None and not isinstance(v, str) for v in (ticket, raw_token, token_format)):
            return _oauth_error(400, "invalid_request", "ticket and claim fields must be strings")

        # 2. requested permissions
        if has_ticket:
            try:
                requested = self.tickets.resolve(ticket, now)
            except TicketError as exc:
                return _oauth_error(400, "invalid_grant", str(exc))
        else:
            try:
                if isinstance(raw_perms, str):
                    raw_perms = json.loads(raw_perms)
                requested = permissions_from_wire(raw_perms)
            except (json.JSONDecodeError, PermissionFormatError, ValueError) as exc:
                return _oauth_error(400, "invalid_request", f"malformed permissions: {exc}")

        # 3. claims
        if not raw_token:
            return self._need_info(requested, now, "a claim token is required")
        try:
            verified = claimlib.verify(claimlib.ClaimToken(raw_token, token_format), self.registry, now)
        except claimlib.ClaimError as exc:
            return self._need_info(requested, now, _CLAIM_ERROR_TEXT.get(type(exc), "claim verification failed"))

        # 4. assessment, against one policy snapshot
        sotw = engine.StateOfTheWorld(current_time=now)
        decision = engine.grant(self.policies.snapshot(), verified, requested, sotw, self.strategies)
        if not decision.granted:
            return _oauth_error(403, "request_denied")
        return Response(200, {"access_token": self.sign_rpt(decision, verified, now), "token_type": "Bearer"},
                        {"Cache-Control": "no-store"})

    def explain(self, verified: claimlib.VerifiedClaims, requested: List[RequestedPermission],
                now: Optional[datetime] = None) -> List[engine.ComplianceReport]:
        """Compliance reports for local diagnostics; never sent over the wire."""
        sotw = engine.StateOfTheWorld(current_time=now or self.clock())
        return engine.evaluate_all(self.policies.snapshot(), verified, requested, sotw)


# ---------------------------------------------------------------------------
# HTTP
# ---------------------------------------------------------------------------


def parse_body(content_type: str, raw: bytes) -> Tuple[Optional[Any], Optional[str]]:
    """Decode a JSON or form-encoded body; returns (value, error)."""
    ctype = (content_type or "").split(";")[0].strip().lower()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        return None, "body is not UTF-8"
    if ctype == "application/json" or (not ctype and text.lstrip()[:1] in ("{", "[")):
        try:
            return json.loads(text), None
        except json.JSONDecodeError as exc:
            return None, f"invalid JSON: {exc.msg}"
    if ctype in ("application/x-www-form-urlencoded", ""):
        return dict(parse_qsl(text, keep_blank_values=True)), None
    return None, f"unsupported content type {ctype!r}"


def create_app(server: AuthorizationServer):
    app = FastAPI(title="UMA Authorization Server", openapi_url=None, docs_url=None, redoc_url=None)
    app.state.uma = server

    def render(resp: Response) -> JSONResponse:
        return JSONResponse(resp.body, status_code=resp.status, headers=resp.headers)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get(DISCOVERY_PATH)
    def discovery():
        return server.discovery()

    @app.get("/keys")
    def keys():
        return server.jwks()

    @app.post("/permission")
    async def permission(request: Request):
        body, err = parse_body(request.headers.get("content-type", "application/json"), await request.body())
        if err:
            return render(_oauth_error(400, "invalid_request", err))
        return render(await run_in_threadpool(server.register_permissions, request.headers.get("authorization"), body))

    @app.post("/token")
    async def token(request: Request):
        body, err = parse_body(request.headers.get("content-type", ""), await request.body())
        if err is None and not isinstance(body, dict):
            err = "token request body must be an object"
        if err:
            return render(_oauth_error(400, "invalid_request", err))
        return render(await run_in_threadpool(server.handle_token, body))

    return app
