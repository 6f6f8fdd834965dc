"""Structured predicate conditions.

A predicate is a small expression tree authored as JSON and evaluated
against a field resolver. The grammar is:

    literal     number | string | bool
    field ref   {"field": "<name>"}  or  {"field": "<name>", "asset": "<ticker>"}
    comparison  {"<op>": [lhs, rhs]}   op in lt, le, gt, ge, eq, ne
    boolean     {"and": [p, ...]}  {"or": [p, ...]}  {"not": p}

Aggregate fields such as ``position_fraction`` take an optional ``asset``
argument; when omitted the asset of the order under evaluation is used.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Mapping, Union

TRADING_FIELDS = frozenset(
    {
        "order_side",
        "order_quantity",
        "order_price",
        "order_value",
        "cash",
        "net_equity",
        "position_fraction",
        "trades_today",
        "rsi",
        "shares_held",
    }
)
ASSET_FIELDS = frozenset({"position_fraction", "trades_today", "rsi", "shares_held"})

ESSAY_FIELDS = frozenset(
    {
        "artifact_kind",
        "word_count",
        "paragraph_count",
        "has_opening_marker",
        "has_closing_marker",
        "contrast_marker_count",
        "ngram_overlap",
        "unsupported_claim_count",
    }
)

FIELD_REGISTRY: dict[str, frozenset[str]] = {
    "trading": TRADING_FIELDS,
    "essay": ESSAY_FIELDS,
}


def registry_for(domain: str) -> frozenset[str]:
    """Field names a rule set of ``domain`` may reference.

    Custom domains may draw on every registered field.
    """
    if domain in FIELD_REGISTRY:
        return FIELD_REGISTRY[domain]
    return TRADING_FIELDS | ESSAY_FIELDS


class PredicateSyntaxError(ValueError):
    """The predicate document does not follow the grammar."""


Value = Union[float, int, str, bool]


@dataclass(frozen=True)
class Literal:
    value: Value


@dataclass(frozen=True)
class FieldRef:
    name: str
    asset: str | None = None


@dataclass(frozen=True)
class Compare:
    op: str
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class BoolOp:
    op: str  # "and" | "or"
    args: tuple["Expr", ...]


@dataclass(frozen=True)
class Not:
    arg: "Expr"


Expr = Union[Literal, FieldRef, Compare, BoolOp, Not]

_COMPARATORS: dict[str, Callable[[Any, Any], bool]] = {
    "lt": operator.lt,
    "le": operator.le,
    "gt": operator.gt,
    "ge": operator.ge,
    "eq": operator.eq,
    "ne": operator.ne,
}
_SYMBOLS = {"lt": "<", "le": "<=", "gt": ">", "ge": ">=", "eq": "==", "ne": "!="}


def parse_predicate(doc: Any) -> Expr:
    if isinstance(doc, bool) or isinstance(doc, (int, float, str)):
        return Literal(doc)
    if not isinstance(doc, Mapping):
        raise PredicateSyntaxError(f"unsupported predicate node: {doc!r}")
    if "field" in doc:
        extra = set(doc) - {"field", "asset"}
        if extra:
            raise PredicateSyntaxError(f"unexpected keys in field reference: {sorted(extra)}")
        name = doc["field"]
        asset = doc.get("asset")
        if not isinstance(name, str) or not name:
            raise PredicateSyntaxError("field name must be a non-empty string")
        if asset is not None and not isinstance(asset, str):
            raise PredicateSyntaxError("asset argument must be a string")
        return FieldRef(name, asset)
    if len(doc) != 1:
        raise PredicateSyntaxError(f"operator node must have exactly one key, got {sorted(doc)}")
    (op, arg), = doc.items()
    if op in _COMPARATORS:
        if not isinstance(arg, list) or len(arg) != 2:
            raise PredicateSyntaxError(f"'{op}' takes a two-element list")
        return Compare(op, parse_predicate(arg[0]), parse_predicate(arg[1]))
    if op in ("and", "or"):
        if not isinstance(arg, list) or not arg:
            raise PredicateSyntaxError(f"'{op}' takes a non-empty list")
        return BoolOp(op, tuple(parse_predicate(a) for a in arg))
    if op == "not":
        return Not(parse_predicate(arg))
    raise PredicateSyntaxError(f"unknown operator '{op}'")


def dump_predicate(expr: Expr) -> Any:
    """Inverse of :func:`parse_predicate`."""
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, FieldRef):
        out: dict[str, Any] = {"field": expr.name}
        if expr.asset is not None:
            out["asset"] = expr.asset
        return out
    if isinstance(expr, Compare):
        return {expr.op: [dump_predicate(expr.lhs), dump_predicate(expr.rhs)]}
    if isinstance(expr, BoolOp):
        return {expr.op: [dump_predicate(a) for a in expr.args]}
    return {"not": dump_predicate(expr.arg)}


def iter_fields(expr: Expr) -> Iterator[FieldRef]:
    if isinstance(expr, FieldRef):
        yield expr
    elif isinstance(expr, Compare):
        yield from iter_fields(expr.lhs)
        yield from iter_fields(expr.rhs)
    elif isinstance(expr, BoolOp):
        for a in expr.args:
            yield from iter_fields(a)
    elif isinstance(expr, Not):
        yield from iter_fields(expr.arg)


Resolver = Callable[[FieldRef], Value]


class Evaluation:
    """Evaluates one predicate against a resolver, remembering field values.

    The remembered values become the violation evidence.
    """

    def __init__(self, resolve: Resolver) -> None:
        self._resolve = resolve
        self.seen: dict[str, Value] = {}

    def value(self, expr: Expr) -> Value:
        if isinstance(expr, Literal):
            return expr.value
        if isinstance(expr, FieldRef):
            key = expr.name if expr.asset is None else f"{expr.name}({expr.asset})"
            if key not in self.seen:
                self.seen[key] = self._resolve(expr)
            return self.seen[key]
        return self.truth(expr)

    def truth(self, expr: Expr) -> bool:
        if isinstance(expr, Compare):
            lhs, rhs = self.value(expr.lhs), self.value(expr.rhs)
            if isinstance(lhs, str) != isinstance(rhs, str) and expr.op not in ("eq", "ne"):
                raise TypeError(f"cannot order {lhs!r} against {rhs!r}")
            return bool(_COMPARATORS[expr.op](lhs, rhs))
        if isinstance(expr, BoolOp):
            if expr.op == "and":
                return all(self.truth(a) for a in expr.args)
            return any(self.truth(a) for a in expr.args)
        if isinstance(expr, Not):
            return not self.truth(expr.arg)
        return bool(self.value(expr))

    def evidence(self) -> str:
        return ", ".join(f"{k}={_fmt(v)}" for k, v in self.seen.items())


def _fmt(v: Value) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return repr(v) if isinstance(v, str) else str(v)


def describe(expr: Expr) -> str:
    """Human-readable infix rendering, used when a predicate has no fields."""
    if isinstance(expr, Literal):
        return repr(expr.value)
    if isinstance(expr, FieldRef):
        return expr.name if expr.asset is None else f"{expr.name}({expr.asset})"
    if isinstance(expr, Compare):
        return f"{describe(expr.lhs)} {_SYMBOLS[expr.op]} {describe(expr.rhs)}"
    if isinstance(expr, BoolOp):
        return "(" + f" {expr.op} ".join(describe(a) for a in expr.args) + ")"
    return f"not {describe(expr.arg)}"
