"""Violation detection: evaluates intercepted actions against compiled rules."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import TYPE_CHECKING, Mapping

from govgate.essay import EssayAnalyzer
from govgate.policy import CompiledRule, CompiledRuleSet, Rule, RuleType, Subject, TextPattern
from govgate.predicates import ESSAY_FIELDS, Evaluation, FieldRef, describe

if TYPE_CHECKING:
    from govgate.trust import TrustState


class ContextMissing(KeyError):
    """A structured predicate needs a value the evaluation context lacks."""


class ActionKind(str, Enum):
    TEXT_OUTPUT = "text_output"
    TRADE_ORDER = "trade_order"


class Side(str, Enum):
    BUY = "buy"
    SELL = "sell"


@dataclass(frozen=True)
class TradeOrder:
    asset: str
    side: Side
    quantity: int
    limit_price: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "side", Side(self.side))
        if self.quantity < 0:
            raise ValueError("quantity must be >= 0")
        if not self.limit_price > 0:
            raise ValueError("limit_price must be > 0")

    @property
    def value(self) -> float:
        return self.quantity * self.limit_price

    def to_dict(self) -> dict:
        return {"asset": self.asset, "side": self.side.value, "quantity": self.quantity, "limit_price": self.limit_price}


@dataclass(frozen=True)
class Action:
    agent_id: str
    action_kind: ActionKind
    timestamp: datetime
    sequence_index: int = 1
    text: str | None = None
    order: TradeOrder | None = None
    resources: tuple[str, ...] = ()
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "action_kind", ActionKind(self.action_kind))
        if self.action_kind is ActionKind.TEXT_OUTPUT:
            if self.text is None or self.order is not None:
                raise ValueError("text_output actions carry text and no order")
        elif self.order is None or self.text is not None:
            raise ValueError("trade_order actions carry an order and no text")

    @classmethod
    def text_output(cls, agent_id: str, text: str, timestamp: datetime, **kw) -> "Action":
        return cls(agent_id, ActionKind.TEXT_OUTPUT, timestamp, text=text, **kw)

    @classmethod
    def trade(cls, agent_id: str, order: TradeOrder, timestamp: datetime, **kw) -> "Action":
        return cls(agent_id, ActionKind.TRADE_ORDER, timestamp, order=order, **kw)


@dataclass(frozen=True)
class PortfolioState:
    cash: float
    holdings: Mapping[str, int] = field(default_factory=dict)
    trades_today: Mapping[str, int] = field(default_factory=dict)

    def shares(self, asset: str) -> int:
        return self.holdings.get(asset, 0)

    def net_equity(self, prices: Mapping[str, float]) -> float:
        total = self.cash
        for asset, shares in self.holdings.items():
            if shares:
                if asset not in prices:
                    raise ContextMissing(f"no price for held asset {asset!r}")
                total += shares * prices[asset]
        return total


@dataclass(frozen=True)
class MarketSnapshot:
    closes: Mapping[str, float]
    rsi: Mapping[str, float | None] = field(default_factory=dict)
    date: str | None = None


@dataclass(frozen=True)
class EvaluationContext:
    portfolio: PortfolioState | None = None
    market: MarketSnapshot | None = None
    trade_counts_today: Mapping[str, int] | None = None
    agent_history: "TrustState | None" = None
    artifact_kind: str = "essay"
    analyzer: EssayAnalyzer | None = None


@dataclass(frozen=True)
class Violation:
    rule_id: str
    rule_type: RuleType
    severity: float
    evidence: str


def check_action(action: Action, ctx: EvaluationContext, rules: CompiledRuleSet) -> list[Violation]:
    """Every rule the action violates, in rule-set order."""
    out: list[Violation] = []
    for compiled in rules.rules:
        if action.action_kind is ActionKind.TEXT_OUTPUT and compiled.subject is Subject.TEXT:
            v = _eval_text(compiled, action.text or "", ctx)
        elif action.action_kind is ActionKind.TRADE_ORDER and compiled.subject is Subject.TRADE:
            v = eval_trading_rule(compiled, action.order, ctx)
        else:
            continue
        if v is not None:
            out.append(v)
    return out


def eval_text_rule(
    rule: Rule | CompiledRule,
    text: str,
    ctx: EvaluationContext | None = None,
) -> Violation | None:
    """Evaluate a pattern rule or an essay-heuristic predicate against text.

    Pattern evidence is the first non-empty matched span.
    """
    compiled = rule if isinstance(rule, CompiledRule) else _compile_one(rule)
    return _eval_text(compiled, text, ctx or EvaluationContext())


def _compile_one(rule: Rule) -> CompiledRule:
    if isinstance(rule.condition, TextPattern):
        return CompiledRule(rule, Subject.TEXT, re.compile(rule.condition.source, re.IGNORECASE))
    return CompiledRule(rule, Subject.TRADE if rule.condition.fields - ESSAY_FIELDS else Subject.TEXT)


def _violation(rule: Rule, evidence: str) -> Violation:
    return Violation(rule.id, rule.rule_type, rule.severity, evidence)


def _eval_text(compiled: CompiledRule, text: str, ctx: EvaluationContext) -> Violation | None:
    rule = compiled.rule
    if compiled.regex is not None:
        if not text:
            return None
        for m in compiled.regex.finditer(text):
            if m.group(0):
                return _violation(rule, m.group(0))
        return None

    analyzer = ctx.analyzer or EssayAnalyzer.default()
    features = analyzer.features(text)

    def resolve(ref: FieldRef):
        if ref.name == "artifact_kind":
            return ctx.artifact_kind
        if ref.name not in ESSAY_FIELDS:
            raise ContextMissing(f"field {ref.name!r} is not available for text actions")
        return features.get(ref.name)

    ev = Evaluation(resolve)
    if ev.truth(rule.condition.expr):
        return _violation(rule, ev.evidence() or describe(rule.condition.expr))
    return None


def eval_trading_rule(rule: Rule | CompiledRule, order: TradeOrder, ctx: EvaluationContext) -> Violation | None:
    """Evaluate a structured trading predicate against an order in context."""
    rule = rule.rule if isinstance(rule, CompiledRule) else rule
    resolver = TradingFields(order, ctx)
    ev = Evaluation(resolver)
    if ev.truth(rule.condition.expr):
        return _violation(rule, ev.evidence() or describe(rule.condition.expr))
    return None


class TradingFields:
    """Resolves trading-registry fields for one candidate order."""

    def __init__(self, order: TradeOrder, ctx: EvaluationContext) -> None:
        self.order = order
        self.ctx = ctx

    def __call__(self, ref: FieldRef):
        name = ref.name
        asset = ref.asset or self.order.asset
        order = self.order
        if name == "order_side":
            return order.side.value
        if name == "order_quantity":
            return order.quantity
        if name == "order_price":
            return order.limit_price
        if name == "order_value":
            return order.value
        if name == "cash":
            return self._portfolio().cash
        if name == "net_equity":
            return self._portfolio().net_equity(self._market().closes)
        if name == "shares_held":
            return self._portfolio().shares(asset)
        if name == "position_fraction":
            return self.position_fraction(asset)
        if name == "trades_today":
            counts = self.ctx.trade_counts_today
            if counts is None:
                counts = self._portfolio().trades_today
            # The candidate order counts toward its own asset's daily total.
            return counts.get(asset, 0) + (1 if asset == order.asset else 0)
        if name == "rsi":
            value = self._market().rsi.get(asset)
            if value is None:
                raise ContextMissing(f"no RSI for {asset!r}")
            return value
        raise ContextMissing(f"unknown trading field {name!r}")

    def _portfolio(self) -> PortfolioState:
        if self.ctx.portfolio is None:
            raise ContextMissing("portfolio")
        return self.ctx.portfolio

    def _market(self) -> MarketSnapshot:
        if self.ctx.market is None:
            raise ContextMissing("market")
        return self.ctx.market

    def position_fraction(self, asset: str) -> float:
        """Position value over net equity, post-trade for the order's asset.

        The traded asset is marked at the order price; other holdings at
        their latest close.
        """
        pf, prices = self._portfolio(), dict(self._market().closes)
        order = self.order
        held = pf.shares(asset)
        cash = pf.cash
        if asset == order.asset:
            signed = order.quantity if order.side is Side.BUY else -order.quantity
            held += signed
            cash -= signed * order.limit_price
            prices[asset] = order.limit_price
        elif asset not in prices:
            raise ContextMissing(f"no price for {asset!r}")
        equity = PortfolioState(cash, {**pf.holdings, asset: held}).net_equity(prices)
        value = held * prices[asset]
        if equity <= 0:
            return math.inf if value > 0 else 0.0
        return value / equity

