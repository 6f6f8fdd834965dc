"""The enforcement layer as an embeddable interposition service.

Agents submit actions; the gateway runs matcher -> decide (which folds the
trust update) -> audit append atomically per agent, forwards cleared
actions to the environment sink and holds escalated ones for review.
"""

from __future__ import annotations

import json
import logging
import threading
from collections import defaultdict
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

from govgate.audit import NO_RULE, AuditRecord, AuditStore, format_timestamp, parse_timestamp
from govgate.enforcement import (
    Decision,
    EnforcementConfig,
    EscalationQueue,
    EscalationTicket,
    Reason,
    TicketStatus,
    Verdict,
    decide,
)
from govgate.essay import EssayAnalyzer
from govgate.matcher import (
    Action,
    ActionKind,
    ContextMissing,
    EvaluationContext,
    MarketSnapshot,
    PortfolioState,
    TradeOrder,
    check_action,
)
from govgate.policy import CompiledRuleSet, compile_rule_set, parse_rule_set
from govgate.trust import TrustConfig, TrustState

log = logging.getLogger(__name__)


class GatewayError(Exception):
    status = 500


class ValidationFailed(GatewayError):
    status = 400


class UnknownDomain(GatewayError):
    status = 404


class Unavailable(GatewayError):
    status = 503


class EnvironmentSink(Protocol):
    def deliver(self, action: Action) -> None: ...


class MemorySink:
    """Collects forwarded actions in order."""

    def __init__(self) -> None:
        self.delivered: list[Action] = []
        self._lock = threading.Lock()

    def deliver(self, action: Action) -> None:
        with self._lock:
            self.delivered.append(action)

    def __len__(self) -> int:
        return len(self.delivered)


class FileSink:
    """Appends forwarded actions as JSON lines."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def deliver(self, action: Action) -> None:
        line = json.dumps(action_to_dict(action), sort_keys=True)
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")


def action_to_dict(action: Action) -> dict:
    return {
        "agent_id": action.agent_id,
        "action_kind": action.action_kind.value,
        "timestamp": format_timestamp(action.timestamp),
        "sequence_index": action.sequence_index,
        "text": action.text,
        "order": action.order.to_dict() if action.order else None,
        "resources": list(action.resources),
    }


@dataclass(frozen=True)
class ActionSubmission:
    agent_id: str
    action_kind: str
    payload: Mapping[str, Any]
    context: Mapping[str, Any] | EvaluationContext = field(default_factory=dict)
    idempotency_key: str | None = None
    domain: str | None = None
    timestamp: datetime | None = None
    resources: tuple[str, ...] = ()

    @classmethod
    def text(cls, agent_id: str, text: str, **kw) -> "ActionSubmission":
        return cls(agent_id, ActionKind.TEXT_OUTPUT.value, {"text": text}, **kw)

    @classmethod
    def trade(cls, agent_id: str, order: TradeOrder, **kw) -> "ActionSubmission":
        return cls(agent_id, ActionKind.TRADE_ORDER.value, order.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ActionSubmission":
        if not isinstance(doc, Mapping):
            raise ValidationFailed("submission must be an object")
        try:
            ts = doc.get("timestamp")
            return cls(
                agent_id=doc["agent_id"],
                action_kind=doc["action_kind"],
                payload=doc["payload"],
                context=doc.get("context") or {},
                idempotency_key=doc.get("idempotency_key"),
                domain=doc.get("domain"),
                timestamp=parse_timestamp(ts) if ts else None,
                resources=tuple(doc.get("resources") or ()),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationFailed(f"malformed submission: {exc}") from None

    def to_dict(self) -> dict:
        if isinstance(self.context, EvaluationContext):
            raise TypeError("embedded contexts do not serialize")
        out: dict[str, Any] = {
            "agent_id": self.agent_id,
            "action_kind": self.action_kind,
            "payload": dict(self.payload),
            "context": dict(self.context),
        }
        for key in ("idempotency_key", "domain"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        if self.timestamp is not None:
            out["timestamp"] = format_timestamp(self.timestamp)
        if self.resources:
            out["resources"] = list(self.resources)
        return out


@dataclass(frozen=True)
class EnforcementResponse:
    agent_id: str
    verdict: Verdict
    triggering: tuple[tuple[str, str], ...]
    trust_before: float
    trust_after: float
    reason: str
    ticket_id: str | None
    sequence_index: int
    timestamp: datetime

    def to_dict(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "verdict": self.verdict.value,
            "triggering": [{"rule_id": r, "verdict": v} for r, v in self.triggering],
            "trust_before": self.trust_before,
            "trust_after": self.trust_after,
            "reason": self.reason,
            "ticket_id": self.ticket_id,
            "sequence_index": self.sequence_index,
            "timestamp": format_timestamp(self.timestamp),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "EnforcementResponse":
        return cls(
            agent_id=doc["agent_id"],
            verdict=Verdict(doc["verdict"]),
            triggering=tuple((t["rule_id"], t["verdict"]) for t in doc["triggering"]),
            trust_before=doc["trust_before"],
            trust_after=doc["trust_after"],
            reason=doc["reason"],
            ticket_id=doc.get("ticket_id"),
            sequence_index=doc["sequence_index"],
            timestamp=parse_timestamp(doc["timestamp"]),
        )

    @property
    def rule_ids(self) -> list[str]:
        return [r for r, _ in self.triggering]


@dataclass(frozen=True)
class DomainSettings:
    trust: TrustConfig = field(default_factory=TrustConfig)
    enforcement: EnforcementConfig = field(default_factory=EnforcementConfig)
    artifact_kind: str = "essay"


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


def audit_rows(action: Action, decision: Decision) -> list[AuditRecord]:
    """One row per violation, or a single '-' row for a clean action."""
    base = dict(
        timestamp=action.timestamp,
        agent_id=action.agent_id,
        trust_before=decision.trust_before,
        trust_after=decision.trust_after,
        decision=decision.verdict.value,
    )
    if not decision.violations:
        return [AuditRecord(rule_id=NO_RULE, violation_type="-", severity=0.0, **base)]
    return [
        AuditRecord(rule_id=v.rule_id, violation_type=v.rule_type.value, severity=v.severity, **base)
        for v in decision.violations
    ]


class Gateway:
    """Embedded enforcement service.

    Args:
        domains: per-domain trust/enforcement settings; the registry of
            domains the gateway accepts.
        audit: audit store (in-memory when omitted).
        escalations: ticket queue.
        sink: environment sink receiving cleared actions.
        governed: when false, actions are checked and scored but always
            forwarded (the ungoverned baseline).
    """

    def __init__(
        self,
        domains: Mapping[str, DomainSettings] | None = None,
        audit: AuditStore | None = None,
        escalations: EscalationQueue | None = None,
        sink: EnvironmentSink | None = None,
        governed: bool = True,
        clock: Callable[[], datetime] = _utcnow,
        analyzer: EssayAnalyzer | None = None,
    ) -> None:
        self.domains: dict[str, DomainSettings] = dict(
            domains or {"trading": DomainSettings(), "essay": DomainSettings()}
        )
        self.audit = audit if audit is not None else AuditStore()
        self.escalations = escalations if escalations is not None else EscalationQueue()
        self.sink = sink if sink is not None else MemorySink()
        self.governed = governed
        self.clock = clock
        self.analyzer = analyzer
        self._active: dict[str, CompiledRuleSet] = {}
        self._versions: dict[str, int] = defaultdict(int)
        self._policy_lock = threading.Lock()
        self._trust: dict[str, TrustState] = {}
        self._last_ts: dict[str, datetime] = {}
        self._agent_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._idempotent: dict[tuple[str, str], EnforcementResponse] = {}

    # -- policies ---------------------------------------------------------

    def put_policy(self, document: str | bytes, domain: str | None = None) -> int:
        """Parse, validate and atomically activate a rule document.

        Raises ParseError/SchemaError/CompileError; the previous snapshot
        stays active on any failure.
        """
        rs = parse_rule_set(document)
        compiled = compile_rule_set(rs)
        return self.activate(compiled, domain or rs.domain)

    def activate(self, compiled: CompiledRuleSet, domain: str | None = None) -> int:
        domain = domain or compiled.domain
        with self._policy_lock:
            self.domains.setdefault(domain, DomainSettings())
            version = self._versions[domain] + 1
            self._versions[domain] = version
            self._active[domain] = replace(compiled, version=version, domain=domain)
        log.info("activated %s policy v%d (%d rules)", domain, version, len(compiled))
        return version

    def active_policy(self, domain: str) -> CompiledRuleSet:
        try:
            return self._active[domain]
        except KeyError:
            raise Unavailable(f"no active policy for domain {domain!r}") from None

    # -- interception -----------------------------------------------------

    def _agent_lock(self, agent_id: str) -> threading.Lock:
        with self._locks_guard:
            lock = self._agent_locks.get(agent_id)
            if lock is None:
                lock = self._agent_locks[agent_id] = threading.Lock()
            return lock

    def _domain_of(self, sub: ActionSubmission) -> str:
        if sub.domain is not None:
            domain = sub.domain
        elif sub.action_kind == ActionKind.TRADE_ORDER.value:
            domain = "trading"
        else:
            domain = "essay"
        if domain not in self.domains:
            raise UnknownDomain(domain)
        return domain

    def _build_context(self, sub: ActionSubmission, settings: DomainSettings, state: TrustState) -> EvaluationContext:
        if isinstance(sub.context, EvaluationContext):
            return replace(sub.context, agent_history=state)
        c = sub.context
        try:
            portfolio = market = None
            if "cash" in c:
                portfolio = PortfolioState(
                    cash=float(c["cash"]),
                    holdings={k: int(v) for k, v in (c.get("holdings") or {}).items()},
                    trades_today={k: int(v) for k, v in (c.get("trades_today") or {}).items()},
                )
            if "prices" in c:
                market = MarketSnapshot(
                    closes={k: float(v) for k, v in c["prices"].items()},
                    rsi={k: (None if v is None else float(v)) for k, v in (c.get("rsi") or {}).items()},
                )
        except (TypeError, ValueError, AttributeError) as exc:
            raise ValidationFailed(f"malformed context: {exc}") from None
        return EvaluationContext(
            portfolio=portfolio,
            market=market,
            agent_history=state,
            artifact_kind=str(c.get("artifact_kind", settings.artifact_kind)),
            analyzer=self.analyzer,
        )

    def _make_action(self, sub: ActionSubmission, seq: int, ts: datetime) -> Action:
        try:
            kind = ActionKind(sub.action_kind)
            if kind is ActionKind.TEXT_OUTPUT:
                text = sub.payload["text"]
                if not isinstance(text, str):
                    raise TypeError("text payload must be a string")
                return Action.text_output(sub.agent_id, text, ts, sequence_index=seq, resources=sub.resources)
            p = sub.payload
            order = TradeOrder(str(p["asset"]), p["side"], int(p["quantity"]), float(p["limit_price"]))
            if order.quantity <= 0:
                raise ValueError("order quantity must be > 0")
            return Action.trade(sub.agent_id, order, ts, sequence_index=seq, resources=sub.resources)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationFailed(f"malformed payload: {exc}") from None

    def _next_timestamp(self, agent_id: str, requested: datetime | None) -> datetime:
        ts = requested or self.clock()
        if ts.tzinfo is None:
            raise ValidationFailed("timestamp must be timezone-aware")
        last = self._last_ts.get(agent_id)
        if last is not None and ts <= last:
            ts = last + timedelta(microseconds=1)
        self._last_ts[agent_id] = ts
        return ts

    def trust_state(self, agent_id: str, domain: str | None = None) -> TrustState:
        state = self._trust.get(agent_id)
        if state is None:
            if domain is None and len(self.domains) == 1:
                domain = next(iter(self.domains))
            settings = self.domains.get(domain or "", DomainSettings())
            state = TrustState.fresh(agent_id, settings.trust)
        return state

    def intercept(self, sub: ActionSubmission) -> EnforcementResponse:
        if not isinstance(sub.agent_id, str) or not sub.agent_id:
            raise ValidationFailed("agent_id must be a non-empty string")
        domain = self._domain_of(sub)
        settings = self.domains[domain]
        rules = self.active_policy(domain)

        with self._agent_lock(sub.agent_id):
            if sub.idempotency_key is not None:
                cached = self._idempotent.get((sub.agent_id, sub.idempotency_key))
                if cached is not None:
                    return cached

            state = self.trust_state(sub.agent_id, domain)
            ctx = self._build_context(sub, settings, state)
            action = self._make_action(sub, state.n_actions + 1, self._next_timestamp(sub.agent_id, sub.timestamp))
            try:
                violations = check_action(action, ctx, rules)
            except ContextMissing as exc:
                raise ValidationFailed(f"context missing: {exc}") from None

            decision = decide(action, violations, state, settings.enforcement, settings.trust, self.governed)

            ticket = self.escalations.push(decision, action) if decision.needs_ticket else None
            self.audit.extend(audit_rows(action, decision), decision.reason.value, ticket.id if ticket else None)
            self._trust[sub.agent_id] = decision.trust_state
            if decision.forwards:
                self.sink.deliver(action)

            response = EnforcementResponse(
                agent_id=sub.agent_id,
                verdict=decision.verdict,
                triggering=tuple((rv.rule_id, rv.verdict.value) for rv in decision.triggering),
                trust_before=decision.trust_before,
                trust_after=decision.trust_after,
                reason=decision.reason.value,
                ticket_id=ticket.id if ticket else None,
                sequence_index=action.sequence_index,
                timestamp=action.timestamp,
            )
            if sub.idempotency_key is not None:
                self._idempotent[(sub.agent_id, sub.idempotency_key)] = response
            return response

    # -- operator surface -------------------------------------------------

    def get_trust(self, agent_id: str, domain: str | None = None) -> dict:
        """Trust summary; unknown agents get the domain's fresh state."""
        return self.trust_state(agent_id, domain).summary()

    def list_escalations(self, status: TicketStatus | str | None = None) -> list[EscalationTicket]:
        return self.escalations.list(status)

    def resolve_escalation(self, ticket_id: str, resolution: str, reviewer: str) -> EscalationTicket:
        """Close a pending ticket.

        Approval forwards the held action and logs an allow row; denial logs
        a block row. Neither changes the agent's trust.
        """
        if resolution not in ("approve", "deny"):
            raise ValidationFailed(f"resolution must be approve or deny, got {resolution!r}")
        ticket = self.escalations.get(ticket_id)
        agent_id = ticket.action.agent_id
        with self._agent_lock(agent_id):
            ticket = self.escalations.resolve(ticket_id, resolution == "approve", reviewer)
            approve = ticket.status is TicketStatus.APPROVED
            tf = self.trust_state(agent_id).current_tf
            lead = ticket.decision.violations[0] if ticket.decision.violations else None
            record = AuditRecord(
                timestamp=self._next_timestamp(agent_id, None),
                agent_id=agent_id,
                rule_id=lead.rule_id if lead else NO_RULE,
                violation_type=lead.rule_type.value if lead else "-",
                severity=lead.severity if lead else 0.0,
                trust_before=tf,
                trust_after=tf,
                decision=Verdict.ALLOW.value if approve else Verdict.BLOCK.value,
            )
            reason = Reason.HUMAN_OVERRIDE if approve else Reason.HUMAN_DENIAL
            self.audit.append(record, reason.value, ticket.id)
            if approve:
                self.sink.deliver(ticket.action)
        return ticket

    def health(self) -> dict:
        return {
            "status": "ok",
            "domains": sorted(self.domains),
            "active": {d: rs.version for d, rs in sorted(self._active.items())},
        }
