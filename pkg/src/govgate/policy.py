"""Rule data model, rule-document parsing, validation and compilation."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Union

from govgate.predicates import (
    ESSAY_FIELDS,
    TRADING_FIELDS,
    Expr,
    PredicateSyntaxError,
    dump_predicate,
    iter_fields,
    parse_predicate,
    registry_for,
)


class RuleType(str, Enum):
    COERCIVE = "coercive"
    NORMATIVE = "normative"
    MIMETIC = "mimetic"


class PolicyError(Exception):
    """Base class for rule-document failures."""


class ParseError(PolicyError):
    """The document is not well-formed structured text."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class SchemaError(PolicyError):
    """The document parses but violates the rule schema."""

    def __init__(self, message: str, rule_id: str | None = None, code: str = "SchemaError"):
        self.rule_id = rule_id
        self.code = code
        super().__init__(message)


class CompileError(PolicyError):
    """Raised when compiling a rule set that has validation findings."""

    def __init__(self, findings: list["Finding"]):
        self.findings = findings
        super().__init__("rule set has findings: " + "; ".join(str(f) for f in findings))


@dataclass(frozen=True)
class TextPattern:
    source: str


@dataclass(frozen=True)
class StructuredPredicate:
    expr: Expr

    @property
    def fields(self) -> frozenset[str]:
        return frozenset(f.name for f in iter_fields(self.expr))


RuleCondition = Union[TextPattern, StructuredPredicate]


@dataclass(frozen=True)
class Rule:
    id: str
    dimension: str
    description: str
    condition: RuleCondition
    rule_type: RuleType
    severity: float
    extra: Mapping[str, Any] = field(default_factory=dict, compare=True)


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...]
    domain: str = "custom"
    version: int = 1

    def get(self, rule_id: str) -> Rule:
        for r in self.rules:
            if r.id == rule_id:
                return r
        raise KeyError(rule_id)


_RULE_KEYS = ("id", "dimension", "description", "pattern", "predicate", "type", "severity")


def parse_rule_set(document: str | bytes, domain: str | None = None) -> RuleSet:
    """Parse a JSON rule document.

    The top level is either a bare list of rules or an object with
    ``rules`` and optional ``domain`` and ``version`` keys.
    """
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None

    version = 1
    if isinstance(doc, list):
        raw_rules = doc
        doc_domain = None
    elif isinstance(doc, dict):
        raw_rules = doc.get("rules")
        if not isinstance(raw_rules, list):
            raise SchemaError("top-level object needs a 'rules' array")
        doc_domain = doc.get("domain")
        version = doc.get("version", 1)
        if not isinstance(version, int) or isinstance(version, bool) or version < 1:
            raise SchemaError(f"version must be a positive integer, got {version!r}")
    else:
        raise SchemaError("document must be a rule array or an object with 'rules'")

    rules = []
    seen: set[str] = set()
    for index, raw in enumerate(raw_rules):
        rule = _parse_rule(raw, index)
        if rule.id in seen:
            raise SchemaError(f"duplicate rule id {rule.id!r}", rule.id, code="DuplicateRuleId")
        seen.add(rule.id)
        rules.append(rule)
    return RuleSet(tuple(rules), domain or doc_domain or "custom", version)


def _parse_rule(raw: Any, index: int) -> Rule:
    if not isinstance(raw, dict):
        raise SchemaError(f"rule #{index} is not an object")
    rule_id = raw.get("id")
    if not isinstance(rule_id, str):
        raise SchemaError(f"rule #{index} lacks a string 'id'")
    label = rule_id or f"#{index}"

    type_str = raw.get("type")
    try:
        rule_type = RuleType(type_str)
    except ValueError:
        raise SchemaError(f"rule {label!r}: unknown type {type_str!r}", rule_id, "UnknownRuleType") from None

    severity = raw.get("severity")
    if isinstance(severity, bool) or not isinstance(severity, (int, float)):
        raise SchemaError(f"rule {label!r}: severity must be a number", rule_id)

    has_pattern, has_predicate = "pattern" in raw, "predicate" in raw
    if has_pattern == has_predicate:
        raise SchemaError(f"rule {label!r}: exactly one of 'pattern' or 'predicate' is required", rule_id)
    if has_pattern:
        if not isinstance(raw["pattern"], str):
            raise SchemaError(f"rule {label!r}: pattern must be a string", rule_id)
        condition: RuleCondition = TextPattern(raw["pattern"])
    else:
        try:
            condition = StructuredPredicate(parse_predicate(raw["predicate"]))
        except PredicateSyntaxError as exc:
            raise SchemaError(f"rule {label!r}: {exc}", rule_id) from None

    for key in ("dimension", "description"):
        if not isinstance(raw.get(key, ""), str):
            raise SchemaError(f"rule {label!r}: {key} must be a string", rule_id)

    extra = {k: v for k, v in raw.items() if k not in _RULE_KEYS}
    return Rule(
        id=rule_id,
        dimension=raw.get("dimension", ""),
        description=raw.get("description", ""),
        condition=condition,
        rule_type=rule_type,
        severity=float(severity),
        extra=extra,
    )


def rule_to_dict(rule: Rule) -> dict[str, Any]:
    out: dict[str, Any] = {"id": rule.id, "dimension": rule.dimension, "description": rule.description}
    if isinstance(rule.condition, TextPattern):
        out["pattern"] = rule.condition.source
    else:
        out["predicate"] = dump_predicate(rule.condition.expr)
    out["type"] = rule.rule_type.value
    out["severity"] = rule.severity
    out.update(rule.extra)
    return out


def serialize_rule_set(rs: RuleSet) -> str:
    doc = {"domain": rs.domain, "version": rs.version, "rules": [rule_to_dict(r) for r in rs.rules]}
    return json.dumps(doc, indent=2)


def load_rule_set(path, domain: str | None = None) -> RuleSet:
    with open(path, "rb") as fh:
        return parse_rule_set(fh.read(), domain)


@dataclass(frozen=True)
class Finding:
    code: str
    rule_id: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}({self.rule_id!r}): {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.findings

    def codes(self) -> list[str]:
        return [f.code for f in self.findings]


# Backreferences and lookbehind fall outside the portable dialect.
_UNPORTABLE = re.compile(r"\\[1-9]|\(\?P=|\(\?<[=!]|\\k<")


def validate_rule_set(rs: RuleSet) -> ValidationReport:
    findings: list[Finding] = []
    registry = registry_for(rs.domain)
    seen: set[str] = set()
    for rule in rs.rules:
        if not rule.id:
            findings.append(Finding("EmptyRuleId", rule.id, "rule id is empty"))
        if rule.id in seen:
            findings.append(Finding("DuplicateRuleId", rule.id, "rule id appears more than once"))
        seen.add(rule.id)
        if not 0.0 <= rule.severity <= 1.0:
            findings.append(Finding("SeverityOutOfRange", rule.id, f"severity {rule.severity} not in [0, 1]"))
        if not isinstance(rule.rule_type, RuleType):
            findings.append(Finding("UnknownRuleType", rule.id, f"type {rule.rule_type!r}"))
        cond = rule.condition
        if isinstance(cond, TextPattern):
            if _UNPORTABLE.search(cond.source):
                findings.append(Finding("UnsupportedRegexFeature", rule.id, "backreferences/lookbehind are not portable"))
            try:
                re.compile(cond.source, re.IGNORECASE)
            except re.error as exc:
                findings.append(Finding("PatternDoesNotCompile", rule.id, str(exc)))
        else:
            names = cond.fields
            for name in sorted(names - registry):
                findings.append(Finding("UnknownField", rule.id, f"field {name!r} is not registered for domain {rs.domain!r}"))
            known = names & registry
            if known & TRADING_FIELDS and known & ESSAY_FIELDS:
                findings.append(Finding("MixedDomainFields", rule.id, "predicate mixes trading and essay fields"))
    return ValidationReport(tuple(findings))


class Subject(str, Enum):
    """What kind of action a compiled rule applies to."""

    TEXT = "text"
    TRADE = "trade"


@dataclass(frozen=True)
class CompiledRule:
    rule: Rule
    subject: Subject
    regex: re.Pattern | None = None

    @property
    def id(self) -> str:
        return self.rule.id


@dataclass(frozen=True)
class CompiledRuleSet:
    rules: tuple[CompiledRule, ...]
    domain: str
    version: int

    def __len__(self) -> int:
        return len(self.rules)


def compile_rule_set(rs: RuleSet) -> CompiledRuleSet:
    report = validate_rule_set(rs)
    if not report.ok:
        raise CompileError(list(report.findings))
    compiled = []
    for rule in rs.rules:
        cond = rule.condition
        if isinstance(cond, TextPattern):
            compiled.append(CompiledRule(rule, Subject.TEXT, re.compile(cond.source, re.IGNORECASE)))
        elif cond.fields & TRADING_FIELDS:
            compiled.append(CompiledRule(rule, Subject.TRADE))
        else:
            compiled.append(CompiledRule(rule, Subject.TEXT))
    return CompiledRuleSet(tuple(compiled), rs.domain, rs.version)
