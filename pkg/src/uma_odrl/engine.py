"""ODRL evaluation producing compliance reports, and their resolution into grants.

The engine is a pure function of (policies, claims, requested permissions,
state of the world).  Evaluation never looks at resource hierarchy: a rule
applies to a request only when its target is the same IRI as the request
target, so a rule on ``/c/`` says nothing about ``/c/x``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Iterable, List, Mapping, Optional, Sequence, Tuple, Union
from urllib.parse import urlsplit, urlunsplit

from .odrl import (
    Constraint,
    LeftOperand,
    Operator,
    Policy,
    Rule,
    RuleKind,
    format_timestamp,
)
from .permissions import RequestedPermission
from .store import PolicyStore

__all__ = [
    "ComplianceReport",
    "Decision",
    "DenyReason",
    "EmptyRequest",
    "EvaluationRequest",
    "PremiseKind",
    "PremiseReport",
    "PremiseStatus",
    "RequestedPermission",
    "RuleReport",
    "StateOfTheWorld",
    "Strategy",
    "build_requests",
    "evaluate",
    "evaluate_all",
    "grant",
    "normalize_iri",
    "resolve",
]


class EmptyRequest(ValueError):
    """No permissions were requested."""


class PremiseKind(str, Enum):
    TARGET_MATCH = "TargetMatch"
    ACTION_MATCH = "ActionMatch"
    PARTY_MATCH = "PartyMatch"
    CONSTRAINT_CHECK = "ConstraintCheck"


class PremiseStatus(str, Enum):
    SATISFIED = "Satisfied"
    UNSATISFIED = "Unsatisfied"


class ReportKind(str, Enum):
    PERMISSION = "PermissionReport"
    PROHIBITION = "ProhibitionReport"


class Activation(str, Enum):
    ACTIVE = "Active"
    INACTIVE = "Inactive"


class DenyReason(str, Enum):
    NO_ACTIVE_RULE = "NoActiveRule"
    PROHIBITION_OVERRIDE = "ProhibitionOverride"


class Strategy(str, Enum):
    DEFAULT_DENY = "default-deny"
    PROHIBITION_OVERRIDES_PERMISSION = "prohibition-overrides-permission"


DEFAULT_STRATEGIES = frozenset(Strategy)


@dataclass(frozen=True)
class EvaluationRequest:
    requesting_party: str
    target: str
    action: str
    context: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class StateOfTheWorld:
    current_time: datetime
    facts: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.current_time.tzinfo is None or self.current_time.utcoffset() is None:
            raise ValueError("current_time must carry a timezone")


@dataclass(frozen=True)
class PremiseReport:
    kind: PremiseKind
    detail: str
    status: PremiseStatus

    @property
    def satisfied(self) -> bool:
        return self.status is PremiseStatus.SATISFIED


@dataclass(frozen=True)
class RuleReport:
    rule: str
    kind: ReportKind
    premises: Tuple[PremiseReport, ...]
    activation: Activation

    def __post_init__(self):
        expected = Activation.ACTIVE if all(p.satisfied for p in self.premises) else Activation.INACTIVE
        if self.activation is not expected:
            raise ValueError(f"rule report {self.rule}: activation {self.activation.value} contradicts premises")

    @property
    def active(self) -> bool:
        return self.activation is Activation.ACTIVE


@dataclass(frozen=True)
class ComplianceReport:
    request: EvaluationRequest
    rule_reports: Tuple[RuleReport, ...]

    def active(self, kind: ReportKind) -> List[RuleReport]:
        return [r for r in self.rule_reports if r.active and r.kind is kind]


@dataclass(frozen=True)
class Decision:
    granted: frozenset
    denied: Tuple[Tuple[str, str, DenyReason], ...] = ()

    def granted_permissions(self) -> List[RequestedPermission]:
        """Granted pairs folded into one RequestedPermission per resource."""
        by_resource: dict = {}
        for resource, action in self.granted:
            by_resource.setdefault(resource, set()).add(action)
        return [RequestedPermission(r, by_resource[r]) for r in sorted(by_resource)]


# ---------------------------------------------------------------------------
# Premises
# ---------------------------------------------------------------------------

_DEFAULT_PORTS = {"http": 80, "https": 443}


def normalize_iri(iri: str) -> str:
    """Lower-case scheme and host and drop a default port; nothing else."""
    try:
        parts = urlsplit(iri)
        if not parts.scheme or not parts.netloc:
            return iri
        scheme = parts.scheme.lower()
        host = parts.hostname or ""
        port = parts.port
    except ValueError:
        return iri
    if ":" in host:
        host = f"[{host}]"
    netloc = host
    if parts.username is not None:
        userinfo = parts.netloc.rpartition("@")[0]
        netloc = f"{userinfo}@{host}"
    if port is not None and port != _DEFAULT_PORTS.get(scheme):
        netloc += f":{port}"
    return urlunsplit((scheme, netloc, parts.path, parts.query, parts.fragment))


def _operand_text(value: Any) -> str:
    if isinstance(value, datetime):
        return format_timestamp(value)
    if isinstance(value, tuple):
        return "[" + ", ".join(_operand_text(v) for v in value) + "]"
    return str(value)


def _compare(op: Operator, left: Any, right: Any) -> bool:
    if op is Operator.EQ:
        return left == right
    if op is Operator.NEQ:
        return left != right
    if op is Operator.LT:
        return left < right
    if op is Operator.LTEQ:
        return left <= right
    if op is Operator.GT:
        return left > right
    if op is Operator.GTEQ:
        return left >= right
    if op is Operator.IS_ANY_OF:
        return left in right
    return False


def check_constraint(constraint: Constraint, request: EvaluationRequest,
                     sotw: StateOfTheWorld) -> PremiseReport:
    """Resolve the left operand and apply the operator; unresolvable means Unsatisfied."""
    left_name = constraint.left_operand.value
    right = constraint.right_operand
    value: Any = None
    if constraint.left_operand is LeftOperand.DATE_TIME:
        value = sotw.current_time
        if not isinstance(value, datetime) or value.utcoffset() is None:
            value = None
    elif constraint.left_operand is LeftOperand.PURPOSE:
        value = request.context.get("purpose")
        if not isinstance(value, str) or not value:
            value = None
    if value is None:
        detail = f"{left_name} unresolved {constraint.operator.value} {_operand_text(right)}"
        return PremiseReport(PremiseKind.CONSTRAINT_CHECK, detail, PremiseStatus.UNSATISFIED)
    try:
        ok = _compare(constraint.operator, value, right)
    except TypeError:
        ok = False
    detail = f"{left_name} {_operand_text(value)} {constraint.operator.value} {_operand_text(right)}"
    return PremiseReport(PremiseKind.CONSTRAINT_CHECK, detail,
                         PremiseStatus.SATISFIED if ok else PremiseStatus.UNSATISFIED)


def _premise(kind: PremiseKind, ok: bool, detail: str) -> PremiseReport:
    return PremiseReport(kind, detail, PremiseStatus.SATISFIED if ok else PremiseStatus.UNSATISFIED)


def evaluate_rule(rule: Rule, request: EvaluationRequest, sotw: StateOfTheWorld) -> RuleReport:
    premises = [
        _premise(PremiseKind.TARGET_MATCH, normalize_iri(rule.target) == normalize_iri(request.target),
                 f"{rule.target} = {request.target}"),
        _premise(PremiseKind.ACTION_MATCH, rule.action == request.action,
                 f"{rule.action} = {request.action}"),
        _premise(PremiseKind.PARTY_MATCH,
                 rule.assignee is None or rule.assignee == request.requesting_party,
                 f"{rule.assignee or '*'} = {request.requesting_party}"),
    ]
    premises.extend(check_constraint(c, request, sotw) for c in rule.constraints)
    active = all(p.satisfied for p in premises)
    kind = ReportKind.PERMISSION if rule.kind is RuleKind.PERMISSION else ReportKind.PROHIBITION
    return RuleReport(rule.uid, kind, tuple(premises), Activation.ACTIVE if active else Activation.INACTIVE)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

PolicySource = Union[PolicyStore, Iterable[Policy]]


def _policies(source: PolicySource) -> Tuple[Policy, ...]:
    if isinstance(source, PolicyStore):
        return source.snapshot()
    return tuple(sorted(source, key=lambda p: p.uid))


def build_requests(claims: Any, requested: Sequence[RequestedPermission]) -> List[EvaluationRequest]:
    """One EvaluationRequest per (resource, access right), carrying WebID and claim context."""
    if not requested:
        raise EmptyRequest("no permissions requested")
    webid = getattr(claims, "webid", None)
    if not webid:
        raise ValueError("claims carry no verified WebID")
    context = dict(getattr(claims, "context", {}) or {})
    out = []
    for perm in requested:
        for right in sorted(perm.access_rights):
            out.append(EvaluationRequest(webid, perm.resource, right, dict(context)))
    return out


def evaluate(policies: PolicySource, request: EvaluationRequest, sotw: StateOfTheWorld) -> ComplianceReport:
    target = normalize_iri(request.target)
    reports = []
    for policy in _policies(policies):
        for rule in policy.rules:
            if normalize_iri(rule.target) == target:
                reports.append(evaluate_rule(rule, request, sotw))
    reports.sort(key=lambda r: r.rule)
    return ComplianceReport(request, tuple(reports))


def resolve(reports: Sequence[ComplianceReport],
            strategies: Iterable[Strategy] = DEFAULT_STRATEGIES) -> Decision:
    """Turn compliance reports into a Decision.

    With both strategies on (the default) a pair is granted iff its report has
    at least one active permission report and no active prohibition report.
    Dropping PROHIBITION_OVERRIDES_PERMISSION lets an active permission win a
    conflict; dropping DEFAULT_DENY grants pairs that no active rule covers.
    """
    strategies = frozenset(Strategy(s) for s in strategies)
    overrides = Strategy.PROHIBITION_OVERRIDES_PERMISSION in strategies
    default_deny = Strategy.DEFAULT_DENY in strategies
    granted = set()
    denied = {}
    for report in reports:
        key = (report.request.target, report.request.action)
        permits = report.active(ReportKind.PERMISSION)
        prohibits = report.active(ReportKind.PROHIBITION)
        if prohibits and (overrides or not permits):
            verdict: Optional[DenyReason] = DenyReason.PROHIBITION_OVERRIDE
        elif permits:
            verdict = None
        elif default_deny:
            verdict = DenyReason.NO_ACTIVE_RULE
        else:
            verdict = None
        if verdict is None:
            if key not in denied:
                granted.add(key)
        else:
            granted.discard(key)
            denied.setdefault(key, verdict)
    return Decision(frozenset(granted), tuple(sorted((r, a, why) for (r, a), why in denied.items())))


def evaluate_all(policies: PolicySource, claims: Any, requested: Sequence[RequestedPermission],
                 sotw: StateOfTheWorld) -> List[ComplianceReport]:
    snapshot = _policies(policies)
    return [evaluate(snapshot, req, sotw) for req in build_requests(claims, requested)]


def grant(policies: PolicySource, claims: Any, requested: Sequence[RequestedPermission],
          sotw: StateOfTheWorld, strategies: Iterable[Strategy] = DEFAULT_STRATEGIES) -> Decision:
    return resolve(evaluate_all(policies, claims, requested, sotw), strategies)


# ---------------------------------------------------------------------------
# Canonical export
# ---------------------------------------------------------------------------


def report_to_json(report: ComplianceReport) -> dict:
    req = report.request
    return {
        "request": {
            "requestingParty": req.requesting_party,
            "target": req.target,
            "action": req.action,
            "context": {k: req.context[k] for k in sorted(req.context)},
        },
        "ruleReports": [
            {
                "rule": rr.rule,
                "kind": rr.kind.value,
                "activation": rr.activation.value,
                "premises": [
                    {"premiseKind": p.kind.value, "detail": p.detail, "status": p.status.value}
                    for p in rr.premises
                ],
            }
            for rr in report.rule_reports
        ],
    }


def serialize_reports(reports: Sequence[ComplianceReport]) -> bytes:
    doc = [report_to_json(r) for r in reports]
    return (json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False, default=str) + "\n").encode("utf-8")


def decision_to_json(decision: Decision) -> dict:
    return {
        "granted": [list(pair) for pair in sorted(decision.granted)],
        "denied": [[r, a, why.value] for r, a, why in decision.denied],
    }
