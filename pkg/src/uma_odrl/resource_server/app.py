"""UMA Resource Server: HTTP CRUD over the resource store, guarded by RPTs."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Tuple, Union

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool
from starlette.responses import Response as HTTPResponse

from .authorizer import ASClient, ASUnavailable, Authorized, Authorizer, Challenge
from .mapping import (
    SUPPORTED_METHODS,
    InvalidPath,
    MethodNotAllowed,
    compute_required_permissions,
    is_container,
    is_valid_child_name,
    normalize_path,
)
from .storage import CONTAINER_TYPE, Conflict, ResourceManager, ResourceNotFound, StorageError

logger = logging.getLogger(__name__)

DEFAULT_MAX_BODY = 10 * 1024 * 1024


class ConfigError(Exception):
    pass


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


@dataclass
class RSConfig:
    as_uri: str
    rs_secret: str
    storage_root: Path
    listen: str = "127.0.0.1:8181"
    base_url: Optional[str] = None
    public_prefixes: List[str] = field(default_factory=list)
    max_body: int = DEFAULT_MAX_BODY

    @property
    def resource_base(self) -> str:
        return (self.base_url or f"http://{self.listen}").rstrip("/")

    @classmethod
    def load(cls, path: Union[str, Path], env: Optional[Mapping[str, str]] = None) -> "RSConfig":
        """JSON config; ``UMA_ODRL_RS_LISTEN`` and ``UMA_ODRL_RS_SECRET`` override it."""
        env = os.environ if env is None else env
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read RS config {path}: {exc}") from None
        try:
            cfg = cls(
                as_uri=data["as_uri"].rstrip("/"),
                rs_secret=data.get("rs_secret", ""),
                storage_root=path.parent / data["storage_root"],
                listen=data.get("listen", cls.listen),
                base_url=data.get("base_url"),
                public_prefixes=list(data.get("public_prefixes", [])),
                max_body=int(data.get("max_body", DEFAULT_MAX_BODY)),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"invalid RS config {path}: missing or bad field {exc}") from None
        cfg.listen = env.get("UMA_ODRL_RS_LISTEN", cfg.listen)
        cfg.rs_secret = env.get("UMA_ODRL_RS_SECRET", cfg.rs_secret)
        if not cfg.rs_secret:
            raise ConfigError("rs_secret must be set (config or UMA_ODRL_RS_SECRET)")
        return cfg


@dataclass
class Response:
    status: int
    body: bytes = b""
    headers: Dict[str, str] = field(default_factory=dict)


def _json(status: int, obj) -> Response:
    return Response(status, json.dumps(obj).encode(), {"Content-Type": "application/json"})


def _error(status: int, message: str) -> Response:
    return _json(status, {"error": message})


class ResourceServer:
    def __init__(self, resources: ResourceManager, authorizer: Authorizer, base_url: str,
                 public_prefixes: Tuple[str, ...] = (), max_body: int = DEFAULT_MAX_BODY,
                 clock: Callable[[], datetime] = utcnow):
        self.resources = resources
        self.authorizer = authorizer
        self.base_url = base_url.rstrip("/")
        self.public_prefixes = tuple(public_prefixes)
        self.max_body = max_body
        self.clock = clock

    @classmethod
    def from_config(cls, cfg: RSConfig, http=None, clock: Callable[[], datetime] = utcnow) -> "ResourceServer":
        client = ASClient(cfg.as_uri, cfg.rs_secret, http=http)
        try:
            client.discover()
            client.verification_key()
        except ASUnavailable as exc:
            raise ConfigError(f"authorization server {cfg.as_uri} is unusable: {exc}") from None
        return cls(ResourceManager(cfg.storage_root), Authorizer(client), cfg.resource_base,
                   tuple(cfg.public_prefixes), cfg.max_body, clock)

    def iri(self, path: str) -> str:
        return self.base_url + path

    def _post_child(self, container: str, presented: Optional[Authorized]) -> Optional[str]:
        """Pick the member name an RPT already authorizes creating under ``container``."""
        if presented is None:
            return None
        prefix = self.iri(container)
        for perm in presented.permissions:
            if "create" not in perm.access_rights or not perm.resource.startswith(prefix):
                continue
            name = perm.resource[len(prefix):]
            if is_valid_child_name(name) and not self.resources.exists(container + name):
                return name
        return None

    def handle(self, method: str, path: str, headers: Mapping[str, str], body: bytes = b"") -> Response:
        method = method.upper()
        if method not in SUPPORTED_METHODS:
            return Response(405, headers={"Allow": ", ".join(SUPPORTED_METHODS)})
        try:
            path = normalize_path(path)
        except InvalidPath as exc:
            return _error(400, str(exc))
        if len(body) > self.max_body:
            return _error(413, "request body too large")

        public = method == "GET" and any(path.startswith(p) for p in self.public_prefixes)
        if not public:
            now = self.clock()
            try:
                presented = self.authorizer.token_permissions(headers, now)
                child = self._post_child(path, presented) if method == "POST" else None
                required = compute_required_permissions(
                    method, path, exists=method == "PUT" and self.resources.exists(path),
                    base_url=self.base_url, child=child)
                if method == "POST":
                    child = required[1].resource[len(self.iri(path)):]
                outcome = self.authorizer.authorize(headers, required, now, presented)
            except MethodNotAllowed as exc:
                return Response(405, json.dumps({"error": str(exc)}).encode(),
                                {"Content-Type": "application/json", "Allow": ", ".join(SUPPORTED_METHODS)})
            except InvalidPath as exc:
                return _error(400, str(exc))
            except ASUnavailable as exc:
                logger.warning("AS unavailable: %s", exc)
                return _error(502, "authorization server unavailable")
            if isinstance(outcome, Challenge):
                return Response(401, headers={"WWW-Authenticate": outcome.www_authenticate()})
        try:
            return self._perform(method, path, headers, body, child if method == "POST" else None)
        except StorageError as exc:
            if exc.status == 500:
                logger.error("storage failure on %s %s: %s", method, path, exc)
                return _error(500, "storage failure")
            return _error(exc.status, str(exc))

    def _perform(self, method: str, path: str, headers: Mapping[str, str], body: bytes,
                 child: Optional[str]) -> Response:
        ctype = headers.get("content-type") or headers.get("Content-Type")
        if method in ("GET", "HEAD"):
            res = self.resources.read(path)
            if res.kind == "Container":
                payload = json.dumps([self.iri(m) for m in res.members]).encode()
                resp = Response(200, payload, {"Content-Type": CONTAINER_TYPE})
            else:
                resp = Response(200, res.body, {"Content-Type": res.content_type})
            if method == "HEAD":
                resp.headers["Content-Length"] = str(len(resp.body))
                resp.body = b""
            return resp
        if method == "PUT":
            created = self.resources.write(path, body, ctype)
            return Response(201, headers={"Location": self.iri(path)}) if created else Response(204)
        if method == "PATCH":
            if is_container(path):
                raise Conflict("containers cannot be patched")
            self.resources.write(path, body, ctype, replace_only=True)
            return Response(204)
        if method == "POST":
            if not self.resources.exists(path):
                raise ResourceNotFound(path)
            target = path + (child or "")
            self.resources.write(target, body, ctype, create_only=True)
            return Response(201, headers={"Location": self.iri(target)})
        if method == "DELETE":
            self.resources.remove(path)
            return Response(204)
        return Response(405)


def create_app(server: ResourceServer):
    app = FastAPI(title="UMA Resource Server", openapi_url=None, docs_url=None, redoc_url=None)
    app.state.uma = server

    @app.get("/healthz")
    def healthz():
        return JSONResponse({"status": "ok"})

    async def dispatch(request: Request):
        declared = request.headers.get("content-length")
        if declared and declared.isdigit() and int(declared) > server.max_body:
            return JSONResponse({"error": "request body too large"}, status_code=413)
        body = await request.body()
        resp = await run_in_threadpool(server.handle, request.method, request.url.path, request.headers, body)
        return HTTPResponse(resp.body, status_code=resp.status, headers=resp.headers)

    app.add_api_route("/{path:path}", dispatch,
                      methods=["GET", "HEAD", "PUT", "POST", "PATCH", "DELETE", "OPTIONS", "TRACE"],
                      include_in_schema=False)
    return app
