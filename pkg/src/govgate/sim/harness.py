"""Seeded simulation runs for the trading and essay domains.

Every action goes through an embedded :class:`Gateway`; the harness only
executes what the gateway forwards. Runs are single-threaded and fully
determined by (regime, seed, data, configs).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import random
from dataclasses import asdict, dataclass, field
from datetime import datetime, time, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from govgate import audit as audit_mod
from govgate.audit import AuditEntry, AuditRecord, AuditStore
from govgate.enforcement import EnforcementConfig, Verdict
from govgate.gateway.service import ActionSubmission, DomainSettings, EnforcementResponse, Gateway
from govgate.indicators import compute_rsi
from govgate.matcher import EvaluationContext, MarketSnapshot, PortfolioState, TradeOrder
from govgate.policy import CompiledRuleSet, RuleSet, serialize_rule_set
from govgate.sim.agents import AgentSpec, ConfigError, DayState, make_agent
from govgate.sim.faults import (
    ADVERSARIES,
    FaultKind,
    FaultPlan,
    InjectionLedger,
    LedgerRow,
    LedgerStatus,
    adversary_books,
    burst_step,
    materialize,
    plan_faults,
    text_faults,
)
from govgate.sim.market import MarketBar, aligned_dates, bundled_market_dir, load_market_csv
from govgate.sim.portfolio import ExecutionError, execute_trade, start_of_day
from govgate.trust import TrustConfig

ESSAY_ROLES = ("idea_agent", "selection_agent", "writer_agent", "revision_agent", "grammar_agent")
ADVERSARY_WRITER = "adv_writer"


class Regime(str, Enum):
    SIM1_UNGOVERNED = "sim1_ungoverned"
    SIM2_GOVERNED = "sim2_governed"
    SIM3_ADVERSARIAL = "sim3_adversarial"

    @property
    def governed(self) -> bool:
        return self is not Regime.SIM1_UNGOVERNED

    @property
    def adversarial(self) -> bool:
        return self is Regime.SIM3_ADVERSARIAL


class ConservationError(AssertionError):
    pass


@dataclass(frozen=True)
class SimRegime:
    regime: Regime
    seed: int = 0
    days: int | None = None
    agents: tuple[AgentSpec, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "regime", Regime(self.regime))


@dataclass(frozen=True)
class SimConfig:
    """Everything a run needs besides the regime and the rule set."""

    trust: TrustConfig = field(default_factory=TrustConfig)
    enforcement: EnforcementConfig = field(default_factory=EnforcementConfig)
    market_path: str | None = None
    initial_cash: float = 10_000.0
    rsi_period: int = 14
    faults_per_day: float = 1.0
    fault_kinds: tuple[str, ...] = tuple(k.value for k in FaultKind)
    corpus_path: str | None = None
    catalog_path: str | None = None


@dataclass
class RunArtifacts:
    run_id: str
    domain: str
    regime: Regime
    seed: int
    entries: list[AuditEntry]
    ledger: InjectionLedger
    trust_rows: list[tuple[int, str, float]]
    portfolio_rows: list[tuple[int, str, str, float, float]] = field(default_factory=list)
    executions: int = 0
    unfilled: int = 0
    responses: list[EnforcementResponse] = field(default_factory=list, repr=False)
    gateway: Gateway | None = field(default=None, repr=False)

    @property
    def audit(self) -> list[AuditRecord]:
        return [e.record for e in self.entries]

    def counts(self) -> dict:
        verdicts = {v.value: 0 for v in Verdict}
        for r in self.responses:
            verdicts[r.verdict.value] += 1
        return {
            "actions": len(self.responses),
            "audit_rows": len(self.entries),
            "executions": self.executions,
            "unfilled": self.unfilled,
            "verdicts": verdicts,
            "ledger_rows": len(self.ledger),
            "ledger_applied": sum(1 for r in self.ledger.rows if r.applicable),
        }

    def files(self) -> dict[str, str]:
        """Artifact file names mapped to their exact text."""
        out = {
            "audit.csv": audit_mod.dumps(self.audit),
            "ledger.csv": self.ledger.dumps(),
            "trust.csv": _csv(("step", "agent_id", "trust"), ((s, a, repr(t)) for s, a, t in self.trust_rows)),
        }
        if self.domain == "trading":
            out["portfolio.csv"] = _csv(
                ("day", "date", "agent_id", "cash", "equity"),
                ((d, date, a, repr(c), repr(e)) for d, date, a, c, e in self.portfolio_rows),
            )
        manifest = {
            "run_id": self.run_id,
            "domain": self.domain,
            "regime": self.regime.value,
            "seed": self.seed,
            "counts": self.counts(),
            "files": sorted(out) + ["manifest.json"],
        }
        out["manifest.json"] = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        return out

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, text in self.files().items():
            path = out / name
            path.write_text(text, encoding="utf-8")
            paths[name] = path
        return paths


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def run_id_for(domain: str, regime: SimRegime, rules: CompiledRuleSet, cfg: SimConfig, data_digest: str) -> str:
    """Content hash of everything that determines the run."""
    doc = {
        "domain": domain,
        "regime": asdict(regime),
        "rules": serialize_rule_set(RuleSet(tuple(c.rule for c in rules.rules), rules.domain)),
        "cfg": asdict(cfg),
        "data": data_digest,
    }
    blob = json.dumps(doc, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _gateway(domain: str, regime: SimRegime, rules: CompiledRuleSet, cfg: SimConfig, artifact_kind: str) -> Gateway:
    gw = Gateway(
        {domain: DomainSettings(cfg.trust, cfg.enforcement, artifact_kind)},
        audit=AuditStore(),
        governed=regime.regime.governed,
    )
    gw.activate(rules, domain)
    return gw


# -- trading ---------------------------------------------------------------


def load_market(cfg: SimConfig) -> dict[str, list[MarketBar]]:
    return load_market_csv(cfg.market_path or bundled_market_dir())


def _market_digest(market: Mapping[str, Sequence[MarketBar]]) -> str:
    h = hashlib.sha256()
    for asset in sorted(market):
        for b in market[asset]:
            h.update(f"{asset},{','.join(b.row())}\n".encode())
    return h.hexdigest()


class _TradingRun:
    def __init__(self, regime: SimRegime, rules: CompiledRuleSet, cfg: SimConfig, market) -> None:
        self.regime = regime
        self.cfg = cfg
        self.market = market
        self.dates = aligned_dates(market)
        by_date = {a: {b.date: b for b in bars} for a, bars in market.items()}
        self.assets = sorted(market)
        self.series = {a: [by_date[a][d].close for d in self.dates] for a in self.assets}
        if not regime.agents:
            raise ConfigError("trading runs need at least one agent")
        self.agents = [make_agent(spec) for spec in regime.agents]
        self.books: dict[str, PortfolioState] = {}
        for spec in regime.agents:
            if spec.id in self.books:
                raise ConfigError(f"duplicate agent id {spec.id!r}")
            cash = cfg.initial_cash if spec.cash is None else spec.cash
            self.books[spec.id] = PortfolioState(float(cash), {k: int(v) for k, v in spec.holdings.items()})
        self.gateway = _gateway("trading", regime, rules, cfg, "trade")
        self.run_id = run_id_for("trading", regime, rules, cfg, _market_digest(market))
        self.ledger = InjectionLedger(self.run_id)
        self.trust_rows: list[tuple[int, str, float]] = []
        self.portfolio_rows: list[tuple[int, str, str, float, float]] = []
        self.responses: list[EnforcementResponse] = []
        self.executions = 0
        self.unfilled = 0
        self.step = 0

    def trading_days(self) -> list[int]:
        days = list(range(self.cfg.rsi_period, len(self.dates)))
        if self.regime.days is not None:
            days = days[: self.regime.days]
        return days

    def submit(self, agent_id: str, order: TradeOrder, day: int, closes, rsi) -> EnforcementResponse:
        self.step += 1
        ts = datetime.combine(self.dates[day], time(14, 30), tzinfo=timezone.utc) + timedelta(microseconds=self.step)
        pf = self.books[agent_id]
        ctx = EvaluationContext(portfolio=pf, market=MarketSnapshot(closes, rsi, self.dates[day].isoformat()), artifact_kind="trade")
        resp = self.gateway.intercept(ActionSubmission.trade(agent_id, order, context=ctx, domain="trading", timestamp=ts))
        self.responses.append(resp)
        self.trust_rows.append((self.step, agent_id, resp.trust_after))
        if resp.verdict.forwards:
            try:
                self.books[agent_id] = execute_trade(pf, order, closes[order.asset])
                self.executions += 1
            except ExecutionError:
                # Only reachable without governance or for uncovered constraints.
                self.unfilled += 1
        return resp

    def day_state(self, agent_id: str, day: int, closes, rsi) -> DayState:
        history = {a: self.series[a][: day + 1] for a in self.assets}
        return DayState(day, self.dates[day], closes, rsi, history, self.books[agent_id])

    def run(self) -> RunArtifacts:
        days = self.trading_days()
        plan = FaultPlan(self.regime.seed)
        if self.regime.regime.adversarial:
            for agent_id, book in adversary_books(self.assets).items():
                self.books.setdefault(agent_id, book)
            plan = plan_faults(self.regime.seed, days, self.assets, self.cfg.faults_per_day, self.cfg.fault_kinds)
            for e in plan.entries:
                self.ledger.record(
                    LedgerRow(
                        self.run_id, e.fault_id, e.day, self.dates[e.day].isoformat(), ADVERSARIES[e.kind].id,
                        e.asset, e.kind.value, e.expected_rule,
                    )
                )
        faults_by_day: dict[int, list] = {}
        for e in plan.entries:
            faults_by_day.setdefault(e.day, []).append(e)

        for day in days:
            closes = {a: self.series[a][day] for a in self.assets}
            rsi = {a: compute_rsi(self.series[a][: day + 1], self.cfg.rsi_period) for a in self.assets}
            for agent_id in self.books:
                self.books[agent_id] = start_of_day(self.books[agent_id])
            opening = {a: pf.net_equity(closes) for a, pf in self.books.items()}

            for agent in self.agents:
                for order in agent.orders(self.day_state(agent.agent_id, day, closes, rsi)):
                    self.submit(agent.agent_id, order, day, closes, rsi)
            for entry in faults_by_day.get(day, ()):
                self.inject(entry, day, closes, rsi)

            for agent_id in sorted(self.books):
                eq = self.books[agent_id].net_equity(closes)
                # Fills happen at the close, so trading moves value between
                # cash and holdings without creating or destroying any.
                if abs(eq - opening[agent_id]) > 1e-6 * max(1.0, abs(eq)):
                    raise ConservationError(f"{agent_id} equity moved {opening[agent_id]} -> {eq} on day {day}")
                self.portfolio_rows.append((day, self.dates[day].isoformat(), agent_id, self.books[agent_id].cash, round(eq, 2)))

        return RunArtifacts(
            self.run_id, "trading", self.regime.regime, self.regime.seed, self.gateway.audit.entries, self.ledger,
            self.trust_rows, self.portfolio_rows, self.executions, self.unfilled, self.responses, self.gateway,
        )

    def inject(self, entry, day: int, closes, rsi) -> None:
        agent_id = ADVERSARIES[entry.kind].id
        if entry.kind is FaultKind.OVERTRADING_BURST:
            keys = []
            for _ in range(int(entry.params.get("count", 55))):
                inj = burst_step(entry, self.day_state(agent_id, day, closes, rsi))
                resp = self.submit(agent_id, inj.order, day, closes, rsi)
                if inj.harmful:
                    keys.append(audit_mod.format_timestamp(resp.timestamp))
            status = LedgerStatus.APPLIED if keys else LedgerStatus.INAPPLICABLE
            self.ledger.mark(entry.fault_id, status, keys)
            return
        order = materialize(entry, self.day_state(agent_id, day, closes, rsi))
        if order is None:
            self.ledger.mark(entry.fault_id, LedgerStatus.INAPPLICABLE)
            return
        resp = self.submit(agent_id, order, day, closes, rsi)
        self.ledger.mark(entry.fault_id, LedgerStatus.APPLIED, [audit_mod.format_timestamp(resp.timestamp)], asset=order.asset)


def run_trading_sim(
    regime: SimRegime,
    rules: CompiledRuleSet,
    cfg: SimConfig | None = None,
    market: Mapping[str, Sequence[MarketBar]] | None = None,
) -> RunArtifacts:
    """Run the daily loop: signals, governance, execution, faults, logging."""
    cfg = cfg or SimConfig()
    market = market if market is not None else load_market(cfg)
    return _TradingRun(regime, rules, cfg, market).run()


# -- essay -----------------------------------------------------------------


def _data_path(name: str) -> Path:
    from importlib import resources

    return Path(str(resources.files("govgate.data").joinpath(name)))


def load_drafts(path: str | Path | None = None) -> list[dict]:
    return json.loads(Path(path or _data_path("corpus/drafts.json")).read_text(encoding="utf-8"))


def load_catalog(path: str | Path | None = None) -> list[dict]:
    return json.loads(Path(path or _data_path("corpus/adversarial_catalog.json")).read_text(encoding="utf-8"))


def idea_output(draft: Mapping) -> str:
    lines = [f"{i}. {t}" for i, t in enumerate([draft["topic"], *draft.get("alternatives", [])], 1)]
    return "Candidate topics:\n" + "\n".join(lines)


def selection_output(draft: Mapping) -> str:
    # The first candidate is always selected.
    return f"Selected topic: {draft['topic']}"


def revision_output(draft: Mapping) -> str:
    return draft.get("revised", draft["draft"])


def grammar_output(text: str) -> str:
    """Whitespace clean-up that keeps paragraph breaks."""
    paras = [" ".join(p.split()) for p in text.strip().split("\n\n")]
    return "\n\n".join(p for p in paras if p)


def run_essay_sim(regime: SimRegime, rules: CompiledRuleSet, cfg: SimConfig | None = None) -> RunArtifacts:
    """Five-role pipeline per draft; an episode stops at its first block or escalation.

    In the adversarial regime each text-bearing catalog payload is injected
    as a standalone submission by an adversarial writer.
    """
    cfg = cfg or SimConfig()
    drafts = load_drafts(cfg.corpus_path)
    episodes: list[tuple[str, Mapping]] = [("draft", d) for d in drafts]
    faults = text_faults(load_catalog(cfg.catalog_path)) if regime.regime.adversarial else ()
    episodes += [("fault", f) for f in faults]
    random.Random(regime.seed).shuffle(episodes)
    if regime.days is not None:
        episodes = episodes[: regime.days]

    digest = hashlib.sha256(json.dumps([drafts, [asdict(f) for f in faults]], sort_keys=True, default=str).encode()).hexdigest()
    run_id = run_id_for("essay", regime, rules, cfg, digest)
    gw = _gateway("essay", regime, rules, cfg, "essay")
    ledger = InjectionLedger(run_id)
    for i, (kind, item) in enumerate(episodes):
        if kind == "fault":
            ledger.record(LedgerRow(run_id, item.fault_id, i, "-", ADVERSARY_WRITER, "-", item.family.value, item.expected_rule))

    base = datetime(2025, 5, 1, 13, 0, tzinfo=timezone.utc)
    trust_rows: list[tuple[int, str, float]] = []
    responses: list[EnforcementResponse] = []
    step = 0

    def submit(agent_id: str, text: str, artifact_kind: str) -> EnforcementResponse:
        nonlocal step
        step += 1
        sub = ActionSubmission.text(
            agent_id, text, context={"artifact_kind": artifact_kind}, domain="essay", timestamp=base + timedelta(seconds=step)
        )
        resp = gw.intercept(sub)
        responses.append(resp)
        trust_rows.append((step, agent_id, resp.trust_after))
        return resp

    for kind, item in episodes:
        if kind == "fault":
            resp = submit(ADVERSARY_WRITER, item.payload, "essay")
            ledger.mark(item.fault_id, LedgerStatus.APPLIED, [audit_mod.format_timestamp(resp.timestamp)])
            continue
        revised = revision_output(item)
        stages = (
            ("idea_agent", idea_output(item), "note"),
            ("selection_agent", selection_output(item), "note"),
            ("writer_agent", item["draft"], "essay"),
            ("revision_agent", revised, "essay"),
            ("grammar_agent", grammar_output(revised), "essay"),
        )
        for role, text, artifact_kind in stages:
            resp = submit(role, text, artifact_kind)
            if resp.verdict in (Verdict.BLOCK, Verdict.ESCALATE):
                break

    executions = sum(1 for r in responses if r.verdict.forwards)
    return RunArtifacts(run_id, "essay", regime.regime, regime.seed, gw.audit.entries, ledger, trust_rows, [], executions, 0, responses, gw)


def run_sim(domain: str, regime: SimRegime, rules: CompiledRuleSet, cfg: SimConfig | None = None) -> RunArtifacts:
    if domain == "trading":
        return run_trading_sim(regime, rules, cfg)
    if domain == "essay":
        return run_essay_sim(regime, rules, cfg)
    raise ConfigError(f"unknown domain {domain!r}")
