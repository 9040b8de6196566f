"""ODRL policy model, JSON wire format and validation.

Policies travel as a fixed-context JSON subset of ODRL 2.2: the term names
match the JSON-LD vocabulary (``uid``, ``permission``, ``prohibition``,
``target``, ``action``, ``assignee``, ``constraint`` ...) but no JSON-LD
processing happens.  Example::

    {
      "@context": "http://www.w3.org/ns/odrl.jsonld",
      "@type": "Set",
      "uid": "https://rs.example/policies/1",
      "permission": [{
        "uid": "https://rs.example/policies/1#read",
        "target": "https://rs.example/docs/a",
        "action": "read",
        "assignee": "https://alice.example/id",
        "constraint": [{
          "leftOperand": "dateTime",
          "operator": "lt",
          "rightOperand": {"@value": "2026-01-01T00:00:00Z", "@type": "xsd:dateTime"}
        }]
      }]
    }

All model objects are frozen and normalised on construction (rules sorted by
uid, constraints sorted, timestamps converted to UTC), so equal policies
serialize to identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Optional, Tuple, Union

ODRL_CONTEXT = "http://www.w3.org/ns/odrl.jsonld"
XSD_DATETIME = "xsd:dateTime"


class PolicyError(Exception):
    """Base for policy document problems; carries an optional locus."""

    def __init__(self, message: str, field: Optional[str] = None,
                 line: Optional[int] = None, column: Optional[int] = None):
        self.message = message
        self.field = field
        self.line = line
        self.column = column
        super().__init__(str(self))

    @property
    def locus(self) -> str:
        parts = []
        if self.line is not None:
            parts.append(f"line {self.line}, column {self.column}")
        if self.field:
            parts.append(f"field {self.field}")
        return "; ".join(parts)

    def __str__(self) -> str:
        return f"{self.message} ({self.locus})" if self.locus else self.message

    def at(self, prefix: str) -> "PolicyError":
        """Return a copy whose field locus is nested under ``prefix``."""
        path = prefix if not self.field else (
            f"{prefix}{self.field}" if self.field.startswith("[") else f"{prefix}.{self.field}")
        return type(self)(self.message, path, self.line, self.column)


class ParseError(PolicyError):
    """The document is not well-formed for the wire format."""


class ValidationError(PolicyError):
    """The document is well-formed but violates a model invariant."""


class PolicyType(str, Enum):
    SET = "Set"
    OFFER = "Offer"
    AGREEMENT = "Agreement"


class RuleKind(str, Enum):
    PERMISSION = "permission"
    PROHIBITION = "prohibition"


class LeftOperand(str, Enum):
    DATE_TIME = "dateTime"
    PURPOSE = "purpose"


class Operator(str, Enum):
    EQ = "eq"
    NEQ = "neq"
    LT = "lt"
    LTEQ = "lteq"
    GT = "gt"
    GTEQ = "gteq"
    IS_ANY_OF = "isAnyOf"


ORDERING_OPERATORS = frozenset({Operator.LT, Operator.LTEQ, Operator.GT, Operator.GTEQ})

Operand = Union[datetime, str]


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO 8601 timestamp that must carry a timezone; result is UTC."""
    if not isinstance(value, str):
        raise ValidationError("timestamp must be a string")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError:
        raise ValidationError(f"invalid timestamp {value!r}") from None
    if parsed.tzinfo is None or parsed.utcoffset() is None:
        raise ValidationError(f"timestamp {value!r} has no timezone")
    return parsed.astimezone(timezone.utc)


def format_timestamp(value: datetime) -> str:
    value = value.astimezone(timezone.utc)
    text = value.strftime("%Y-%m-%dT%H:%M:%S")
    if value.microsecond:
        text += f".{value.microsecond:06d}"
    return text + "Z"


def _require_iri(value: Any, name: str) -> None:
    if not isinstance(value, str) or not value or any(c.isspace() for c in value):
        raise ValidationError(f"{name} must be a non-empty IRI", name)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constraint:
    left_operand: LeftOperand
    operator: Operator
    right_operand: Union[Operand, Tuple[Operand, ...]]

    def __post_init__(self):
        try:
            left = LeftOperand(self.left_operand)
        except ValueError:
            raise ValidationError(f"unsupported leftOperand {self.left_operand!r}", "leftOperand") from None
        try:
            op = Operator(self.operator)
        except ValueError:
            raise ValidationError(f"unsupported operator {self.operator!r}", "operator") from None
        if op in ORDERING_OPERATORS and left is not LeftOperand.DATE_TIME:
            raise ValidationError(f"operator {op.value} requires leftOperand dateTime", "operator")

        def norm(v: Any) -> Operand:
            if left is LeftOperand.DATE_TIME:
                if isinstance(v, datetime):
                    if v.tzinfo is None or v.utcoffset() is None:
                        raise ValidationError("dateTime operand has no timezone", "rightOperand")
                    return v.astimezone(timezone.utc)
                try:
                    return parse_timestamp(v)
                except ValidationError as exc:
                    raise ValidationError(exc.message, "rightOperand") from None
            if not isinstance(v, str) or not v:
                raise ValidationError("purpose operand must be a non-empty string", "rightOperand")
            return v

        right = self.right_operand
        if op is Operator.IS_ANY_OF:
            if isinstance(right, (str, datetime)) or not right:
                raise ValidationError("isAnyOf requires a non-empty rightOperand list", "rightOperand")
            values = tuple(sorted({norm(v) for v in right}))
        else:
            if not isinstance(right, (str, datetime)):
                raise ValidationError(f"operator {op.value} requires a single rightOperand", "rightOperand")
            values = norm(right)
        object.__setattr__(self, "left_operand", left)
        object.__setattr__(self, "operator", op)
        object.__setattr__(self, "right_operand", values)

    def sort_key(self) -> str:
        return json.dumps(constraint_to_json(self), sort_keys=True)


@dataclass(frozen=True)
class Rule:
    uid: str
    kind: RuleKind
    target: str
    action: str
    assignee: Optional[str] = None
    assigner: Optional[str] = None
    constraints: Tuple[Constraint, ...] = ()

    def __post_init__(self):
        _require_iri(self.uid, "uid")
        try:
            kind = RuleKind(self.kind)
        except ValueError:
            raise ValidationError(f"unknown rule kind {self.kind!r}", "kind") from None
        _require_iri(self.target, "target")
        _require_iri(self.action, "action")
        if self.assignee is not None:
            _require_iri(self.assignee, "assignee")
        if self.assigner is not None:
            _require_iri(self.assigner, "assigner")
        constraints = tuple(self.constraints)
        for c in constraints:
            if not isinstance(c, Constraint):
                raise ValidationError("constraints must be Constraint objects", "constraint")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "constraints", tuple(sorted(constraints, key=Constraint.sort_key)))


@dataclass(frozen=True)
class Policy:
    uid: str
    rules: Tuple[Rule, ...]
    policy_type: PolicyType = PolicyType.SET

    def __post_init__(self):
        _require_iri(self.uid, "uid")
        try:
            ptype = PolicyType(self.policy_type)
        except ValueError:
            raise ValidationError(f"unknown policy type {self.policy_type!r}", "@type") from None
        rules = tuple(self.rules)
        if not rules:
            raise ValidationError("policy requires at least one rule", "rules")
        seen = set()
        for r in rules:
            if not isinstance(r, Rule):
                raise ValidationError("rules must be Rule objects", "rules")
            if r.uid in seen:
                raise ValidationError(f"duplicate rule uid {r.uid!r}", "rules")
            seen.add(r.uid)
        object.__setattr__(self, "policy_type", ptype)
        object.__setattr__(self, "rules", tuple(sorted(rules, key=lambda r: r.uid)))

    @property
    def permissions(self) -> Tuple[Rule, ...]:
        return tuple(r for r in self.rules if r.kind is RuleKind.PERMISSION)

    @property
    def prohibitions(self) -> Tuple[Rule, ...]:
        return tuple(r for r in self.rules if r.kind is RuleKind.PROHIBITION)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _operand_to_json(value: Operand) -> Any:
    if isinstance(value, datetime):
        return {"@value": format_timestamp(value), "@type": XSD_DATETIME}
    return value


def constraint_to_json(c: Constraint) -> dict:
    right = c.right_operand
    return {
        "leftOperand": c.left_operand.value,
        "operator": c.operator.value,
        "rightOperand": [_operand_to_json(v) for v in right] if isinstance(right, tuple) else _operand_to_json(right),
    }


def rule_to_json(rule: Rule) -> dict:
    out: dict = {"uid": rule.uid, "target": rule.target, "action": rule.action}
    if rule.assignee is not None:
        out["assignee"] = rule.assignee
    if rule.assigner is not None:
        out["assigner"] = rule.assigner
    if rule.constraints:
        out["constraint"] = [constraint_to_json(c) for c in rule.constraints]
    return out


def policy_to_json(policy: Policy) -> dict:
    out: dict = {"@context": ODRL_CONTEXT, "@type": policy.policy_type.value, "uid": policy.uid}
    for kind in RuleKind:
        rules = [rule_to_json(r) for r in policy.rules if r.kind is kind]
        if rules:
            out[kind.value] = rules
    return out


def serialize_policy(policy: Policy) -> bytes:
    """Canonical UTF-8 JSON: sorted keys, rules ordered by uid, trailing newline."""
    text = json.dumps(policy_to_json(policy), sort_keys=True, indent=2, ensure_ascii=False)
    return (text + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_POLICY_FIELDS = {"@context", "@type", "uid", "permission", "prohibition"}
_RULE_FIELDS = {"uid", "target", "action", "assignee", "assigner", "constraint"}
_CONSTRAINT_FIELDS = {"leftOperand", "operator", "rightOperand"}


def _check_fields(obj: Any, allowed: set, required: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", where or None)
    for key in obj:
        if key not in allowed:
            raise ParseError(f"unknown field {key!r}", f"{where}.{key}" if where else key)
    for key in sorted(required):
        if key not in obj:
            raise ParseError(f"missing required field {key!r}", f"{where}.{key}" if where else key)


def _string(obj: dict, key: str, where: str) -> str:
    value = obj[key]
    if not isinstance(value, str):
        raise ParseError(f"{key} must be a string", f"{where}.{key}" if where else key)
    return value


def _operand_from_json(value: Any, where: str) -> Any:
    if isinstance(value, dict):
        if set(value) - {"@value", "@type"} or "@value" not in value:
            raise ParseError("typed literal must have @value and optional @type", where)
        if value.get("@type", XSD_DATETIME) != XSD_DATETIME:
            raise ValidationError(f"unsupported literal type {value['@type']!r}", where)
        literal = value["@value"]
        if not isinstance(literal, str):
            raise ParseError("@value must be a string", where)
        try:
            return parse_timestamp(literal)
        except ValidationError as exc:
            raise ValidationError(exc.message, where) from None
    if isinstance(value, str):
        return value
    raise ParseError("rightOperand must be a string or typed literal", where)


def _constraint_from_json(obj: Any, where: str) -> Constraint:
    _check_fields(obj, _CONSTRAINT_FIELDS, _CONSTRAINT_FIELDS, where)
    left = _string(obj, "leftOperand", where)
    op = _string(obj, "operator", where)
    raw = obj["rightOperand"]
    try:
        if isinstance(raw, list):
            right: Any = tuple(_operand_from_json(v, f"{where}.rightOperand[{i}]") for i, v in enumerate(raw))
        else:
            right = _operand_from_json(raw, f"{where}.rightOperand")
        return Constraint(left, op, right)
    except PolicyError as exc:
        if exc.field and exc.field.startswith(where):
            raise
        raise exc.at(where) from None


def _rule_from_json(obj: Any, kind: RuleKind, where: str) -> Rule:
    _check_fields(obj, _RULE_FIELDS, {"uid", "target", "action"}, where)
    constraints_raw = obj.get("constraint", [])
    if not isinstance(constraints_raw, list):
        raise ParseError("constraint must be a list", f"{where}.constraint")
    constraints = tuple(
        _constraint_from_json(c, f"{where}.constraint[{i}]") for i, c in enumerate(constraints_raw))
    fields = {k: _string(obj, k, where) for k in ("uid", "target", "action")}
    optional = {k: _string(obj, k, where) for k in ("assignee", "assigner") if k in obj}
    try:
        return Rule(kind=kind, constraints=constraints, **fields, **optional)
    except PolicyError as exc:
        raise exc.at(where) from None


def policy_from_json(obj: Any) -> Policy:
    _check_fields(obj, _POLICY_FIELDS, {"uid"}, "")
    if "@context" in obj and obj["@context"] != ODRL_CONTEXT:
        raise ParseError(f"@context must be {ODRL_CONTEXT!r}", "@context")
    rules = []
    for kind in RuleKind:
        raw = obj.get(kind.value, [])
        if not isinstance(raw, list):
            raise ParseError(f"{kind.value} must be a list", kind.value)
        rules.extend(_rule_from_json(r, kind, f"{kind.value}[{i}]") for i, r in enumerate(raw))
    uid = _string(obj, "uid", "")
    ptype = _string(obj, "@type", "") if "@type" in obj else PolicyType.SET.value
    try:
        return Policy(uid=uid, rules=tuple(rules), policy_type=ptype)
    except PolicyError as exc:
        if exc.field == "rules":
            exc = type(exc)(exc.message, "permission/prohibition")
        raise exc from None


def parse_policy(document: Union[bytes, str], format: str = "odrl-json") -> Policy:
    """Parse and validate one policy document.

    Raises ParseError (with line/column or field locus) for malformed input and
    ValidationError for well-formed documents that break a model invariant.
    """
    if format != "odrl-json":
        raise ParseError(f"unsupported policy format {format!r}")
    if isinstance(document, bytes):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"document is not UTF-8: {exc.reason}") from None
    try:
        obj = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, column=exc.colno) from None
    return policy_from_json(obj)
