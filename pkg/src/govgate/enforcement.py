"""Enforcement decisions: per-rule verdicts, priority folding, trust floor, escalation."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from govgate.matcher import Action, Violation
from govgate.policy import RuleType
from govgate.trust import TrustConfig, TrustState, record_action


class Verdict(str, Enum):
    ALLOW = "allow"
    WARN = "warn"
    ESCALATE = "escalate"
    BLOCK = "block"

    @property
    def rank(self) -> int:
        return _RANK[self]

    @property
    def forwards(self) -> bool:
        """Whether the action reaches the environment under this verdict."""
        return self in (Verdict.ALLOW, Verdict.WARN)


_RANK = {Verdict.ALLOW: 0, Verdict.WARN: 1, Verdict.ESCALATE: 2, Verdict.BLOCK: 3}


class Mode(str, Enum):
    STRICT = "strict"
    ADAPTIVE = "adaptive"
    DECISION_MATRIX = "decision_matrix"


class Reason(str, Enum):
    CLEAN = "clean"
    COERCIVE_RULE = "coercive_rule"
    NORMATIVE_RULE = "normative_rule"
    MIMETIC_RULE = "mimetic_rule"
    ADAPTIVE_WARNING = "adaptive_warning"
    ADAPTIVE_ESCALATION = "adaptive_escalation"
    DECISION_MATRIX = "decision_matrix"
    GLOBAL_TRUST_FLOOR = "global_trust_floor"
    UNGOVERNED = "ungoverned"
    HUMAN_OVERRIDE = "human_override"
    HUMAN_DENIAL = "human_denial"


class Tier(str, Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"


@dataclass(frozen=True)
class EnforcementConfig:
    mode: Mode = Mode.STRICT
    theta: float = 0.5
    tau: int = 2
    theta_warn: float = 0.7
    theta_block: float = 0.4
    theta_crit: float = 0.2
    escalate_low_tier: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.theta_block < self.theta_warn:
            raise ValueError("theta_block must be < theta_warn")
        if not self.theta_crit <= self.theta_block:
            raise ValueError("theta_crit must be <= theta_block")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")


@dataclass(frozen=True)
class RuleVerdict:
    rule_id: str
    verdict: Verdict
    reason: Reason
    escalate: bool = False
    notify: bool = False


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    triggering: tuple[RuleVerdict, ...]
    trust_before: float
    trust_after: float
    reason: Reason
    escalate: bool
    violations: tuple[Violation, ...]
    trust_state: TrustState = field(repr=False, compare=True)

    @property
    def needs_ticket(self) -> bool:
        return self.verdict is Verdict.ESCALATE or (self.verdict is Verdict.BLOCK and self.escalate)

    @property
    def forwards(self) -> bool:
        return self.verdict.forwards


def resolve_priority(per_rule: Iterable[Verdict]) -> Verdict:
    """Maximum verdict under block > escalate > warn > allow; empty is allow."""
    return max(per_rule, key=lambda v: v.rank, default=Verdict.ALLOW)


def strict_verdict(v: Violation) -> RuleVerdict:
    if v.rule_type is RuleType.COERCIVE:
        return RuleVerdict(v.rule_id, Verdict.BLOCK, Reason.COERCIVE_RULE)
    if v.rule_type is RuleType.NORMATIVE:
        return RuleVerdict(v.rule_id, Verdict.WARN, Reason.NORMATIVE_RULE)
    # Mimetic rules have no blocking semantics outside the decision matrix.
    return RuleVerdict(v.rule_id, Verdict.WARN, Reason.MIMETIC_RULE)


def adaptive_verdict(v: Violation, trust: TrustState, cfg: EnforcementConfig) -> RuleVerdict:
    """History- and trust-sensitive verdict for a non-coercive violation."""
    prior = trust.prior_violations(v.rule_id)
    tf = trust.current_tf
    if prior >= cfg.tau or tf <= cfg.theta:
        return RuleVerdict(v.rule_id, Verdict.ESCALATE, Reason.ADAPTIVE_ESCALATION, escalate=True)
    return RuleVerdict(v.rule_id, Verdict.WARN, Reason.ADAPTIVE_WARNING)


def trust_tier(tf: float, cfg: EnforcementConfig) -> Tier:
    if tf > cfg.theta_warn:
        return Tier.HIGH
    if tf > cfg.theta_block:
        return Tier.MEDIUM
    return Tier.LOW


_MATRIX = {
    (Tier.HIGH, RuleType.NORMATIVE): (Verdict.ALLOW, True),  # allow with notification
    (Tier.HIGH, RuleType.MIMETIC): (Verdict.ALLOW, False),
    (Tier.HIGH, RuleType.COERCIVE): (Verdict.WARN, False),
    (Tier.MEDIUM, RuleType.NORMATIVE): (Verdict.WARN, False),
    (Tier.MEDIUM, RuleType.MIMETIC): (Verdict.WARN, False),
    (Tier.MEDIUM, RuleType.COERCIVE): (Verdict.BLOCK, False),
}


def matrix_verdict(v: Violation, trust: TrustState, cfg: EnforcementConfig) -> RuleVerdict:
    """Tier table lookup on the agent's pre-action trust."""
    tier = trust_tier(trust.current_tf, cfg)
    if tier is Tier.LOW:
        return RuleVerdict(v.rule_id, Verdict.BLOCK, Reason.DECISION_MATRIX, escalate=cfg.escalate_low_tier)
    verdict, notify = _MATRIX[(tier, v.rule_type)]
    return RuleVerdict(v.rule_id, verdict, Reason.DECISION_MATRIX, notify=notify)


def per_rule_verdict(v: Violation, trust: TrustState, cfg: EnforcementConfig) -> RuleVerdict:
    if cfg.mode is Mode.DECISION_MATRIX:
        return matrix_verdict(v, trust, cfg)
    if cfg.mode is Mode.ADAPTIVE and v.rule_type is not RuleType.COERCIVE:
        return adaptive_verdict(v, trust, cfg)
    return strict_verdict(v)


def decide(
    action: Action | None,
    violations: Sequence[Violation],
    trust: TrustState,
    cfg: EnforcementConfig,
    trust_cfg: TrustConfig,
    governed: bool = True,
) -> Decision:
    """Enforcement function for one action.

    ``trust`` is the agent's pre-action state. The returned decision carries
    the post-action trust state; nothing is mutated. With ``governed`` false
    the violations are still folded into trust but the verdict is allow.
    ``action`` is not inspected and may be None when replaying a trace.
    """
    after = record_action(trust, violations, trust_cfg)
    if not governed:
        return Decision(
            Verdict.ALLOW, (), trust.current_tf, after.current_tf, Reason.UNGOVERNED, False, tuple(violations), after
        )

    triggering = tuple(per_rule_verdict(v, trust, cfg) for v in violations)
    verdict = resolve_priority(rv.verdict for rv in triggering)
    if triggering:
        lead = next(rv for rv in triggering if rv.verdict is verdict)
        reason = lead.reason
    else:
        reason = Reason.CLEAN
    escalate = any(rv.escalate and rv.verdict is verdict for rv in triggering)

    if after.current_tf < cfg.theta_crit:
        verdict, reason, escalate = Verdict.BLOCK, Reason.GLOBAL_TRUST_FLOOR, True

    return Decision(verdict, triggering, trust.current_tf, after.current_tf, reason, escalate, tuple(violations), after)


class TicketStatus(str, Enum):
    PENDING = "pending"
    APPROVED = "approved"
    DENIED = "denied"


class UnknownTicket(KeyError):
    pass


class AlreadyResolved(RuntimeError):
    pass


@dataclass
class EscalationTicket:
    id: str
    action: Action
    decision: Decision
    status: TicketStatus = TicketStatus.PENDING
    reviewer: str | None = None

    def to_dict(self) -> dict:
        a, d = self.action, self.decision
        return {
            "id": self.id,
            "status": self.status.value,
            "reviewer": self.reviewer,
            "agent_id": a.agent_id,
            "timestamp": a.timestamp.isoformat().replace("+00:00", "Z"),
            "action_kind": a.action_kind.value,
            "text": a.text,
            "order": a.order.to_dict() if a.order else None,
            "verdict": d.verdict.value,
            "reason": d.reason.value,
            "triggering": [[rv.rule_id, rv.verdict.value] for rv in d.triggering],
            "trust_before": d.trust_before,
            "trust_after": d.trust_after,
        }


class EscalationQueue:
    """Append-only ticket queue; optionally mirrored to a JSON-lines file."""

    def __init__(self, path: str | Path | None = None) -> None:
        self._tickets: list[EscalationTicket] = []
        self._by_id: dict[str, EscalationTicket] = {}
        self._lock = threading.Lock()
        self.path = Path(path) if path else None

    def push(self, decision: Decision, action: Action) -> EscalationTicket:
        with self._lock:
            ticket = EscalationTicket(f"E-{len(self._tickets) + 1:04d}", action, decision)
            self._tickets.append(ticket)
            self._by_id[ticket.id] = ticket
            self._persist(ticket)
            return ticket

    def resolve(self, ticket_id: str, approve: bool, reviewer: str) -> EscalationTicket:
        with self._lock:
            ticket = self._by_id.get(ticket_id)
            if ticket is None:
                raise UnknownTicket(ticket_id)
            if ticket.status is not TicketStatus.PENDING:
                raise AlreadyResolved(ticket_id)
            ticket.status = TicketStatus.APPROVED if approve else TicketStatus.DENIED
            ticket.reviewer = reviewer
            self._persist(ticket)
            return ticket

    def get(self, ticket_id: str) -> EscalationTicket:
        try:
            return self._by_id[ticket_id]
        except KeyError:
            raise UnknownTicket(ticket_id) from None

    def list(self, status: TicketStatus | str | None = None) -> list[EscalationTicket]:
        with self._lock:
            if status is None:
                return list(self._tickets)
            status = TicketStatus(status)
            return [t for t in self._tickets if t.status is status]

    def __len__(self) -> int:
        return len(self._tickets)

    def _persist(self, ticket: EscalationTicket) -> None:
        if self.path is None:
            return
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(ticket.to_dict(), sort_keys=True) + "\n")
