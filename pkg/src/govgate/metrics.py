"""Detection metrics, sensitivity sweeps, trajectories, heatmaps and the keyword baseline."""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from govgate.audit import NO_RULE, AuditRecord, group_actions, parse_timestamp
from govgate.enforcement import EnforcementConfig, Verdict, decide
from govgate.gateway.service import ActionSubmission, DomainSettings, Gateway
from govgate.matcher import Action, ActionKind, TradeOrder, Violation
from govgate.policy import CompiledRuleSet, RuleType
from govgate.sim.faults import InjectionLedger
from govgate.trust import TrustConfig, TrustState

BLOCKING = frozenset({Verdict.BLOCK.value, Verdict.ESCALATE.value})
WEIGHTS = ("alpha", "beta", "gamma", "delta")


class RunMismatch(ValueError):
    pass


class BrokenChain(ValueError):
    pass


# -- confusion ------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass(frozen=True)
class PRF:
    """Precision, recall and F1; None marks an undefined metric."""

    precision: float | None
    recall: float | None
    f1: float | None

    def to_dict(self) -> dict:
        return {k: ("undefined" if v is None else v) for k, v in (("precision", self.precision), ("recall", self.recall), ("f1", self.f1))}


def derive_prf(c: ConfusionCounts) -> PRF:
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else None
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else None
    if precision is None or recall is None:
        f1 = None
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return PRF(precision, recall, f1)


ActionKey = tuple[str, datetime]


def ledger_keys(ledger: InjectionLedger, kinds: Iterable[str] | None = None) -> set[ActionKey]:
    """Action keys of applied faults, optionally restricted to some fault kinds."""
    wanted = set(kinds) if kinds is not None else None
    out = set()
    for row in ledger.rows:
        if not row.applicable or (wanted is not None and row.fault_kind not in wanted):
            continue
        for ts in row.action_keys:
            out.add((row.agent_id, parse_timestamp(ts)))
    return out


HarmDefinition = Callable[[ActionKey, Sequence[AuditRecord]], bool]


def confusion(
    audit: Sequence[AuditRecord],
    ledger: InjectionLedger,
    harm_definition: str | HarmDefinition = "ledger",
    audit_run_id: str | None = None,
    kinds: Iterable[str] | None = None,
) -> ConfusionCounts:
    """Join audit actions against ground truth.

    ``harm_definition`` is "ledger" (harmful iff listed in the ledger),
    "shadow" (harmful iff any rule matched, for the ungoverned baseline), or
    a callable over the action key and its rows. Escalations count as
    blocked since the action is held; warnings do not.

    With ``kinds`` given, only faults of those kinds count as harmful;
    actions produced by other applied faults are left out entirely.
    """
    if audit_run_id is not None and audit_run_id != ledger.run_id:
        raise RunMismatch(f"audit run {audit_run_id} vs ledger run {ledger.run_id}")
    harmful_keys = ledger_keys(ledger, kinds)
    other_faults = ledger_keys(ledger) - harmful_keys if kinds is not None else set()

    if harm_definition == "ledger":
        is_harmful: HarmDefinition = lambda key, rows: key in harmful_keys
    elif harm_definition == "shadow":
        is_harmful = lambda key, rows: any(r.rule_id != NO_RULE for r in rows)
    elif callable(harm_definition):
        is_harmful = harm_definition
    else:
        raise ValueError(f"unknown harm definition {harm_definition!r}")

    tp = fp = fn = tn = 0
    for rows in group_actions(audit):
        key = rows[0].action_key
        if key in other_faults:
            continue
        blocked = any(r.decision in BLOCKING for r in rows)
        if is_harmful(key, rows):
            tp, fn = (tp + 1, fn) if blocked else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if blocked else (fp, tn + 1)
    return ConfusionCounts(tp, fp, fn, tn)


# -- keyword baseline -----------------------------------------------------


class BaselineVerdict(str, Enum):
    BLOCKED = "blocked"
    ALLOWED = "allowed"


def load_lexicon(path: str | Path | None = None) -> list[str]:
    if path is None:
        text = resources.files("govgate.data").joinpath("corpus/lexicon.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    doc = json.loads(text)
    if isinstance(doc, list):
        return list(doc)
    return list(doc.get("prohibited_terms", [])) + list(doc.get("financial_phrases", []))


_LEXICON_CACHE: dict[tuple[str, ...], re.Pattern] = {}


def _lexicon_regex(lexicon: Sequence[str]) -> re.Pattern | None:
    key = tuple(lexicon)
    if not key:
        return None
    if key not in _LEXICON_CACHE:
        alts = sorted((r"\s+".join(map(re.escape, t.split())) for t in key), key=len, reverse=True)
        _LEXICON_CACHE[key] = re.compile(r"\b(?:" + "|".join(alts) + r")\b", re.IGNORECASE)
    return _LEXICON_CACHE[key]


def keyword_baseline(action: Action | str, lexicon: Sequence[str]) -> BaselineVerdict:
    """Case-insensitive whole-word lexicon filter.

    Structured trade orders carry no text and are always allowed.
    """
    if isinstance(action, Action):
        if action.action_kind is ActionKind.TRADE_ORDER:
            return BaselineVerdict.ALLOWED
        text = action.text or ""
    else:
        text = action
    rx = _lexicon_regex(lexicon)
    if rx is not None and text and rx.search(text):
        return BaselineVerdict.BLOCKED
    return BaselineVerdict.ALLOWED


@dataclass(frozen=True)
class CatalogOutcome:
    id: str
    family: str
    expected_rule: str
    engine_verdict: Verdict
    engine_rules: tuple[str, ...]
    keyword: BaselineVerdict

    @property
    def engine_blocked(self) -> bool:
        return self.engine_verdict.value in BLOCKING

    @property
    def keyword_blocked(self) -> bool:
        return self.keyword is BaselineVerdict.BLOCKED


def evaluate_catalog(
    catalog: Sequence[Mapping],
    rules: Mapping[str, CompiledRuleSet],
    settings: Mapping[str, DomainSettings],
    lexicon: Sequence[str],
) -> list[CatalogOutcome]:
    """Run each catalog payload through a fresh agent and through the keyword filter.

    Text payloads go to the essay domain as notes; orders are materialized
    with the entry's portfolio context in the trading domain.
    """
    gw = Gateway(dict(settings))
    for domain, compiled in rules.items():
        gw.activate(compiled, domain)
    ts = datetime(2025, 5, 1, tzinfo=timezone.utc)
    out = []
    for i, item in enumerate(catalog):
        agent = f"catalog-{item['id']}"
        when = ts + timedelta(seconds=i)
        if item.get("kind", "text") == "trade":
            o = item["order"]
            order = TradeOrder(o["asset"], o["side"], int(o["quantity"]), float(o["limit_price"]))
            sub = ActionSubmission.trade(agent, order, context=item["context"], domain="trading", timestamp=when)
            action: Action = Action.trade(agent, order, when)
        else:
            sub = ActionSubmission.text(agent, item["payload"], context={"artifact_kind": "note"}, domain="essay", timestamp=when)
            action = Action.text_output(agent, item["payload"], when)
        resp = gw.intercept(sub)
        out.append(
            CatalogOutcome(item["id"], item["family"], item["expected_rule"], resp.verdict, tuple(resp.rule_ids), keyword_baseline(action, lexicon))
        )
    return out


# -- sensitivity sweep ----------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple[float, ...]
    fixed: float = 0.5

    def __post_init__(self) -> None:
        if self.parameter not in WEIGHTS:
            raise ValueError(f"parameter must be one of {WEIGHTS}")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise ValueError("sweep values must be non-empty")
        for v in self.values + (self.fixed,):
            if not 0.1 - 1e-12 <= v <= 1.0 + 1e-12:
                raise ValueError(f"sweep value {v} outside [0.1, 1]")

    def config(self, base: TrustConfig, value: float) -> TrustConfig:
        weights = {w: self.fixed for w in WEIGHTS}
        weights[self.parameter] = value
        return base.with_weights(**weights)


DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))


def full_grid(values: Sequence[float] = DEFAULT_GRID, fixed: float = 0.5) -> list[SweepSpec]:
    return [SweepSpec(p, tuple(values), fixed) for p in WEIGHTS]


@dataclass(frozen=True)
class SweepCell:
    mean_trust: float
    blocks: int = 0
    warns: int = 0
    escalations: int = 0


@dataclass(frozen=True)
class SweepRow:
    parameter: str
    value: float
    cell: SweepCell


Trace = Mapping[str, Sequence[Sequence[Violation]]]


def trace_from_audit(audit: Sequence[AuditRecord]) -> dict[str, list[list[Violation]]]:
    """Per-agent violation lists per action, in log order."""
    out: dict[str, list[list[Violation]]] = {}
    for rows in group_actions(audit):
        vs = [Violation(r.rule_id, RuleType(r.violation_type), r.severity, "") for r in rows if r.rule_id != NO_RULE]
        out.setdefault(rows[0].agent_id, []).append(vs)
    return out


@dataclass(frozen=True)
class TraceScenario:
    """Replays a fixed violation trace under a trust configuration."""

    trace: Trace
    enforcement: EnforcementConfig = field(default_factory=EnforcementConfig)

    def __call__(self, cfg: TrustConfig) -> SweepCell:
        finals = []
        counts = {Verdict.BLOCK: 0, Verdict.WARN: 0, Verdict.ESCALATE: 0, Verdict.ALLOW: 0}
        for agent, actions in sorted(self.trace.items()):
            state = TrustState.fresh(agent, cfg)
            for vs in actions:
                d = decide(None, vs, state, self.enforcement, cfg)
                counts[d.verdict] += 1
                state = d.trust_state
            finals.append(state.current_tf)
        mean = sum(finals) / len(finals) if finals else 0.0
        return SweepCell(mean, counts[Verdict.BLOCK], counts[Verdict.WARN], counts[Verdict.ESCALATE])


def sweep(spec: SweepSpec, runner: Callable[[TrustConfig], SweepCell], base: TrustConfig | None = None) -> list[SweepRow]:
    """One row per grid value, varying only ``spec.parameter``."""
    base = base or TrustConfig()
    return [SweepRow(spec.parameter, v, runner(spec.config(base, v))) for v in spec.values]


def sweep_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("parameter", "value", "mean_trust", "blocks", "warns", "escalations"))
    for r in rows:
        w.writerow((r.parameter, repr(r.value), repr(r.cell.mean_trust), r.cell.blocks, r.cell.warns, r.cell.escalations))
    return buf.getvalue()


# -- trajectories and heatmaps --------------------------------------------


def check_chain(audit: Sequence[AuditRecord]) -> None:
    """Raise BrokenChain unless every agent's trust_before follows its last trust_after.

    All rows of one action must also agree on both trust values.
    """
    last: dict[str, float] = {}
    for rows in group_actions(audit):
        first = rows[0]
        for r in rows[1:]:
            if (r.trust_before, r.trust_after) != (first.trust_before, first.trust_after):
                raise BrokenChain(f"{first.agent_id} at {first.timestamp}: rows disagree on trust")
        prev = last.get(first.agent_id)
        if prev is not None and first.trust_before != prev:
            raise BrokenChain(f"{first.agent_id} at {first.timestamp}: trust_before {first.trust_before} != {prev}")
        last[first.agent_id] = first.trust_after


def trust_trajectories(audit: Sequence[AuditRecord]) -> dict[str, list[tuple[int, float]]]:
    """Per-agent (step, trust_after) series; step counts that agent's actions from 1."""
    check_chain(audit)
    out: dict[str, list[tuple[int, float]]] = {}
    for rows in group_actions(audit):
        series = out.setdefault(rows[0].agent_id, [])
        series.append((len(series) + 1, rows[0].trust_after))
    return out


def trajectories_csv(series: Mapping[str, Sequence[tuple[int, float]]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("step", "agent_id", "trust"))
    for agent in sorted(series):
        for step, tf in series[agent]:
            w.writerow((step, agent, repr(tf)))
    return buf.getvalue()


@dataclass(frozen=True)
class Heatmap:
    rows: tuple[str, ...]
    columns: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]

    def cell(self, row: str, column: str) -> int:
        if row not in self.rows or column not in self.columns:
            return 0
        return self.counts[self.rows.index(row)][self.columns.index(column)]

    def column_total(self, column: str) -> int:
        if column not in self.columns:
            return 0
        j = self.columns.index(column)
        return sum(r[j] for r in self.counts)

    def nonzero_columns(self) -> list[str]:
        return [c for c in self.columns if self.column_total(c)]

    def to_csv(self, corner: str = "group") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow((corner, *self.columns))
        for name, counts in zip(self.rows, self.counts):
            w.writerow((name, *counts))
        return buf.getvalue()


def _rule_key(rule_id: str) -> tuple:
    m = re.fullmatch(r"([A-Za-z_]*)(\d+)", rule_id)
    return (m.group(1), int(m.group(2))) if m else (rule_id, 0)


def violation_heatmap(
    audit: Sequence[AuditRecord],
    group_by: str | Mapping[str, str] = "agent",
) -> Heatmap:
    """Violation counts per (group, rule id).

    ``group_by`` is "agent", "all", or a mapping from agent id to a group
    label such as the agent's script.
    """
    table: dict[str, dict[str, int]] = {}
    for r in audit:
        if r.rule_id == NO_RULE:
            continue
        if group_by == "agent":
            g = r.agent_id
        elif group_by == "all":
            g = "all"
        else:
            g = group_by.get(r.agent_id, r.agent_id)
        row = table.setdefault(g, {})
        row[r.rule_id] = row.get(r.rule_id, 0) + 1
    cols = sorted({c for row in table.values() for c in row}, key=_rule_key)
    names = sorted(table)
    return Heatmap(tuple(names), tuple(cols), tuple(tuple(table[n].get(c, 0) for c in cols) for n in names))


def demo_trajectories(essay_rules: CompiledRuleSet, trust: TrustConfig, steps: int = 20) -> dict[str, list[tuple[int, float]]]:
    """Three agents through the gateway: compliant, mixed, and a repeat offender."""
    from govgate.sim.harness import load_drafts

    drafts = load_drafts()
    clean = next(d["draft"] for d in drafts if d["label"] == "clean")
    deficient = next(d["draft"] for d in drafts if d["id"] == "deficient-short")
    offensive = next(d["draft"] for d in drafts if d["label"] == "ethical")
    gw = Gateway({"essay": DomainSettings(trust, EnforcementConfig())})
    gw.activate(essay_rules, "essay")
    base = datetime(2025, 5, 1, 13, 0, tzinfo=timezone.utc)
    scripts = {
        "compliant": lambda i: clean,
        "mixed": lambda i: deficient if i % 3 == 0 else clean,
        "offender": lambda i: offensive if i % 2 == 0 else clean,
    }
    for i in range(steps):
        for j, (agent, pick) in enumerate(scripts.items()):
            gw.intercept(ActionSubmission.text(agent, pick(i), domain="essay", timestamp=base + timedelta(seconds=3 * i + j)))
    return trust_trajectories(gw.audit.records)


# -- run summary ----------------------------------------------------------


def summarize(audit: Sequence[AuditRecord], ledger: InjectionLedger, run_id: str | None = None, coercive_kinds: Iterable[str] = ()) -> dict:
    """Metrics summary for one run directory's artifacts."""
    overall = confusion(audit, ledger, audit_run_id=run_id)
    actions = group_actions(audit)
    verdicts: dict[str, int] = {}
    for rows in actions:
        v = rows[0].decision
        verdicts[v] = verdicts.get(v, 0) + 1
    out = {
        "run_id": ledger.run_id or run_id,
        "actions": len(actions),
        "verdicts": dict(sorted(verdicts.items())),
        "overall": {**overall.to_dict(), **derive_prf(overall).to_dict()},
    }
    kinds = list(coercive_kinds)
    if kinds and any(r.fault_kind in kinds for r in ledger.rows):
        c = confusion(audit, ledger, audit_run_id=run_id, kinds=kinds)
        out["coercive_faults"] = {**c.to_dict(), **derive_prf(c).to_dict()}
    per_kind = {}
    for kind in sorted({r.fault_kind for r in ledger.rows}):
        rows = [r for r in ledger.rows if r.fault_kind == kind]
        per_kind[kind] = {
            "planned": len(rows),
            "applied": sum(1 for r in rows if r.applicable),
            "inapplicable": sum(1 for r in rows if not r.applicable),
        }
    if per_kind:
        out["faults"] = per_kind
    return out
