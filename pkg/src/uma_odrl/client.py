"""Requesting Party client: runs the UMA grant flow and records a transcript."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional
from urllib.parse import urlsplit

import httpx

from .claims import ClaimToken
from .permissions import CREATE, MODIFY, RequestedPermission, permissions_to_wire
from .tokens import TokenError, decode_unverified
from .resource_server.mapping import compute_required_permissions, new_child_name, parent_of

UMA_GRANT_TYPE = "urn:ietf:params:oauth:grant-type:uma-ticket"

_PARAM = re.compile(r'([A-Za-z_][A-Za-z0-9_]*)="([^"]*)"')


class Outcome(str, Enum):
    GRANTED = "Granted"
    NEED_INFO = "NeedInfo"
    DENIED = "Denied"
    ERROR = "Error"


EXIT_CODES = {Outcome.GRANTED: 0, Outcome.NEED_INFO: 3, Outcome.DENIED: 4, Outcome.ERROR: 5}


@dataclass
class FlowStep:
    label: str
    request: Dict[str, Any]
    response: Dict[str, Any]


@dataclass
class FlowTranscript:
    steps: List[FlowStep] = field(default_factory=list)
    outcome: Outcome = Outcome.ERROR
    ticket: Optional[str] = None
    rpt: Optional[str] = None
    rpt_permissions: Optional[List[dict]] = None
    error: Optional[str] = None

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.outcome]

    def to_json(self) -> dict:
        return {
            "steps": [{"label": s.label, "request": s.request, "response": s.response} for s in self.steps],
            "outcome": self.outcome.value,
            "ticket": self.ticket,
            "rpt_permissions": self.rpt_permissions,
            "error": self.error,
        }

    def to_text(self) -> str:
        lines = []
        for i, step in enumerate(self.steps, 1):
            req, resp = step.request, step.response
            lines.append(f"[{i}] {step.label}: {req['method']} {req['url']} -> {resp['status']}")
            for name, value in sorted(resp.get("headers", {}).items()):
                lines.append(f"      {name}: {value}")
            if "json" in resp:
                lines.append("      " + json.dumps(resp["json"], sort_keys=True))
        if self.ticket:
            lines.append(f"ticket: {self.ticket}")
        if self.rpt_permissions is not None:
            lines.append("granted: " + json.dumps(self.rpt_permissions, sort_keys=True))
        if self.error:
            lines.append(f"error: {self.error}")
        lines.append(f"outcome: {self.outcome.value}")
        return "\n".join(lines)


def parse_www_authenticate(value: str) -> Dict[str, str]:
    """Parameters of an ``UMA`` challenge; empty dict for any other scheme."""
    scheme, _, rest = value.strip().partition(" ")
    if scheme.upper() != "UMA":
        return {}
    return dict(_PARAM.findall(rest))


def direct_permissions(method: str, url: str) -> List[RequestedPermission]:
    """Permissions to ask for in direct mode, from the RS mapping table.

    The client cannot see whether a PUT target exists, so PUT asks for both
    the create and the replace rights; the AS grants whichever policy allows.
    """
    parts = urlsplit(url)
    base = f"{parts.scheme}://{parts.netloc}"
    path = parts.path or "/"
    if method.upper() == "PUT" and path != "/":
        return [RequestedPermission(base + path, {CREATE, MODIFY}),
                RequestedPermission(base + parent_of(path), {MODIFY})]
    child = new_child_name() if method.upper() == "POST" else None
    return compute_required_permissions(method, path, base_url=base, child=child)


_SHOWN_HEADERS = ("www-authenticate", "location", "content-type")


def _summarize_request(method: str, url: str, headers: Dict[str, str], form: Optional[dict] = None) -> dict:
    out: Dict[str, Any] = {"method": method, "url": url}
    if "Authorization" in headers:
        out["authorization"] = "Bearer <rpt>"
    if form is not None:
        out["form"] = {k: ("<claim_token>" if k == "claim_token" else v) for k, v in form.items()}
    return out


def _summarize_response(resp: httpx.Response) -> dict:
    out: Dict[str, Any] = {
        "status": resp.status_code,
        "headers": {k: resp.headers[k] for k in _SHOWN_HEADERS if k in resp.headers},
    }
    if resp.headers.get("content-type", "").startswith("application/json"):
        try:
            body = resp.json()
        except ValueError:
            body = None
        if isinstance(body, dict) and "access_token" in body:
            body = dict(body, access_token="<rpt>")
        out["json"] = body
    else:
        out["body_bytes"] = len(resp.content)
    return out


def _discover_token_endpoint(http: httpx.Client, as_uri: str) -> str:
    resp = http.get(as_uri.rstrip("/") + "/.well-known/uma2-configuration")
    resp.raise_for_status()
    endpoint = resp.json().get("token_endpoint")
    if not isinstance(endpoint, str):
        raise ValueError("discovery document has no token_endpoint")
    return endpoint


def run_flow(method: str, url: str, *, claim_token: Optional[ClaimToken] = None, direct: bool = False,
             as_uri: Optional[str] = None, body: bytes = b"", content_type: Optional[str] = None,
             http: Optional[httpx.Client] = None) -> FlowTranscript:
    """Attempt, exchange the ticket for an RPT, retry; or in direct mode skip the attempt."""
    method = method.upper()
    http = http or httpx.Client(timeout=10.0)
    transcript = FlowTranscript()
    base_headers = {"Content-Type": content_type} if content_type else {}

    def rs_call(label: str, rpt: Optional[str] = None) -> httpx.Response:
        headers = dict(base_headers)
        if rpt:
            headers["Authorization"] = f"Bearer {rpt}"
        resp = http.request(method, url, content=body or None, headers=headers)
        transcript.steps.append(FlowStep(label, _summarize_request(method, url, headers), _summarize_response(resp)))
        return resp

    try:
        form: Dict[str, str] = {"grant_type": UMA_GRANT_TYPE}
        if direct:
            if not as_uri:
                raise ValueError("direct mode needs the AS location")
            form["permissions"] = json.dumps(permissions_to_wire(direct_permissions(method, url)))
        else:
            first = rs_call("rs-attempt")
            if first.status_code != 401:
                transcript.outcome = Outcome.GRANTED if first.status_code < 400 else Outcome.ERROR
                return transcript
            challenge = parse_www_authenticate(first.headers.get("www-authenticate", ""))
            if "as_uri" not in challenge or "ticket" not in challenge:
                transcript.error = "401 without an UMA challenge"
                return transcript
            as_uri = challenge["as_uri"]
            transcript.ticket = challenge["ticket"]
            form["ticket"] = challenge["ticket"]
        if claim_token is not None:
            form["claim_token"] = claim_token.raw
            form["claim_token_format"] = claim_token.format

        token_endpoint = _discover_token_endpoint(http, as_uri)
        resp = http.post(token_endpoint, data=form)
        transcript.steps.append(FlowStep("as-token", _summarize_request("POST", token_endpoint, {}, form),
                                         _summarize_response(resp)))
        try:
            answer = resp.json()
        except ValueError:
            answer = {}
        if resp.status_code != 200:
            error = answer.get("error") if isinstance(answer, dict) else None
            if error == "need_info":
                transcript.outcome = Outcome.NEED_INFO
                transcript.ticket = answer.get("ticket")
            elif error == "request_denied":
                transcript.outcome = Outcome.DENIED
            else:
                transcript.error = f"token endpoint answered {resp.status_code} {error or ''}".strip()
            return transcript
        rpt = answer.get("access_token")
        transcript.rpt = rpt
        transcript.rpt_permissions = _rpt_permissions(rpt)
        retry = rs_call("rs-retry", rpt)
        if retry.status_code == 401:
            transcript.outcome = Outcome.DENIED
        elif retry.status_code < 400:
            transcript.outcome = Outcome.GRANTED
        else:
            transcript.error = f"resource server answered {retry.status_code}"
        return transcript
    except (httpx.HTTPError, ValueError) as exc:
        transcript.outcome = Outcome.ERROR
        transcript.error = str(exc)
        return transcript


def _rpt_permissions(rpt: Any) -> Optional[List[dict]]:
    try:
        _, payload = decode_unverified(rpt)
    except TokenError:
        return None
    perms = payload.get("permissions")
    return perms if isinstance(perms, list) else None
