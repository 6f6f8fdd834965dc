"""Per-agent longitudinal trust state and the two trust-factor formulations."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from govgate.matcher import Violation
from govgate.policy import RuleType


class EmptyHistory(ValueError):
    pass


class IndexBeyondHorizon(ValueError):
    pass


class Formulation(str, Enum):
    MAIN_TEXT = "main_text"
    NORMALIZED = "normalized"


@dataclass(frozen=True)
class TrustWeights:
    """Penalty weights: alpha coercive, beta normative, gamma mimetic, delta severity."""

    alpha: float
    beta: float
    gamma: float
    delta: float

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma", "delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @classmethod
    def essay(cls) -> "TrustWeights":
        return cls(0.6, 0.8, 0.3, 0.4)

    @classmethod
    def trading(cls) -> "TrustWeights":
        return cls(0.9, 0.4, 0.2, 0.6)

    def weight_for(self, rule_type: RuleType) -> float:
        return {RuleType.COERCIVE: self.alpha, RuleType.NORMATIVE: self.beta, RuleType.MIMETIC: self.gamma}[rule_type]


@dataclass(frozen=True)
class TrustConfig:
    weights: TrustWeights = field(default_factory=TrustWeights.trading)
    lam: float = 0.9
    epsilon: float = 0.001
    formulation: Formulation = Formulation.NORMALIZED

    def __post_init__(self) -> None:
        object.__setattr__(self, "formulation", Formulation(self.formulation))
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("lambda must lie in (0, 1]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")

    def with_weights(self, **changes: float) -> "TrustConfig":
        return replace(self, weights=replace(self.weights, **changes))


@dataclass(frozen=True)
class SeverityEvent:
    t: int
    severity: float


@dataclass(frozen=True)
class TrustState:
    agent_id: str
    n_actions: int = 0
    v_coer: int = 0
    v_norm: int = 0
    v_mim: int = 0
    severity_events: tuple[SeverityEvent, ...] = ()
    current_tf: float = 1.0
    per_rule_counts: Mapping[str, int] = field(default_factory=lambda: MappingProxyType({}))

    @classmethod
    def fresh(cls, agent_id: str, cfg: TrustConfig | None = None) -> "TrustState":
        state = cls(agent_id)
        if cfg is not None:
            state = replace(state, current_tf=empty_history_value(cfg))
        return state

    def prior_violations(self, rule_id: str) -> int:
        return self.per_rule_counts.get(rule_id, 0)

    def summary(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "n_actions": self.n_actions,
            "v_coer": self.v_coer,
            "v_norm": self.v_norm,
            "v_mim": self.v_mim,
            "current_tf": self.current_tf,
            "per_rule_counts": dict(self.per_rule_counts),
        }


def severity_sum(events: Iterable[SeverityEvent | tuple[int, float]], n_actions: int, lam: float) -> float:
    """Recency-weighted severity: sum of lam**(N - t) * s_t."""
    total = 0.0
    for ev in events:
        t, s = (ev.t, ev.severity) if isinstance(ev, SeverityEvent) else ev
        if t > n_actions:
            raise IndexBeyondHorizon(f"event at t={t} beyond N={n_actions}")
        # 0.0 ** 0 == 1.0, so lam=0 keeps exactly the events at t == N.
        total += lam ** (n_actions - t) * s
    return total


def trust_factor_main(state: TrustState, cfg: TrustConfig) -> float:
    """Unnormalized weighted-sum form.

    alpha*(1 - Vc/N) + beta*(1 - Vn/N) + gamma*(1 - Vm/N) - delta*S_sum,
    with alpha paired to coercive counts.
    """
    n = state.n_actions
    if n == 0:
        raise EmptyHistory(state.agent_id)
    w = cfg.weights
    s = severity_sum(state.severity_events, n, cfg.lam)
    return (
        w.alpha * (1 - state.v_coer / n)
        + w.beta * (1 - state.v_norm / n)
        + w.gamma * (1 - state.v_mim / n)
        - w.delta * s
    )


def trust_factor_factored(state: TrustState, cfg: TrustConfig) -> float:
    """(alpha+beta+gamma) * (1 - Vbar/N) - delta*S_sum with Vbar the weighted mean count."""
    n = state.n_actions
    if n == 0:
        raise EmptyHistory(state.agent_id)
    w = cfg.weights
    total = w.alpha + w.beta + w.gamma
    vbar = (w.alpha * state.v_coer + w.beta * state.v_norm + w.gamma * state.v_mim) / total
    return total * (1 - vbar / n) - w.delta * severity_sum(state.severity_events, n, cfg.lam)


def weighted_penalty(state: TrustState, cfg: TrustConfig) -> float:
    w = cfg.weights
    s = severity_sum(state.severity_events, state.n_actions, cfg.lam)
    return w.alpha * state.v_coer + w.beta * state.v_norm + w.gamma * state.v_mim + w.delta * s


def trust_factor_normalized(state: TrustState, cfg: TrustConfig) -> float:
    """1 - (alpha*Vc + beta*Vn + gamma*Vm + delta*S_sum) / (N + epsilon)."""
    return 1.0 - weighted_penalty(state, cfg) / (state.n_actions + cfg.epsilon)


def trust_factor(state: TrustState, cfg: TrustConfig) -> float:
    if cfg.formulation is Formulation.MAIN_TEXT:
        return trust_factor_main(state, cfg)
    return trust_factor_normalized(state, cfg)


def empty_history_value(cfg: TrustConfig) -> float:
    """Trust reported for an agent with no actions yet.

    The main-text form is undefined at N = 0; its zero-violation limit
    alpha + beta + gamma is used.
    """
    if cfg.formulation is Formulation.MAIN_TEXT:
        w = cfg.weights
        return w.alpha + w.beta + w.gamma
    return 1.0


def record_action(state: TrustState, violations: Sequence[Violation], cfg: TrustConfig) -> TrustState:
    """Fold one action and its violations into a new state."""
    n = state.n_actions + 1
    counts = {RuleType.COERCIVE: state.v_coer, RuleType.NORMATIVE: state.v_norm, RuleType.MIMETIC: state.v_mim}
    per_rule = dict(state.per_rule_counts)
    events = list(state.severity_events)
    for v in violations:
        counts[RuleType(v.rule_type)] += 1
        per_rule[v.rule_id] = per_rule.get(v.rule_id, 0) + 1
        events.append(SeverityEvent(n, v.severity))
    new = TrustState(
        agent_id=state.agent_id,
        n_actions=n,
        v_coer=counts[RuleType.COERCIVE],
        v_norm=counts[RuleType.NORMATIVE],
        v_mim=counts[RuleType.MIMETIC],
        severity_events=tuple(events),
        per_rule_counts=MappingProxyType(per_rule),
    )
    return replace(new, current_tf=trust_factor(new, cfg))


def replay(agent_id: str, history: Iterable[Sequence[Violation]], cfg: TrustConfig) -> TrustState:
    state = TrustState.fresh(agent_id, cfg)
    for violations in history:
        state = record_action(state, violations, cfg)
    return state
