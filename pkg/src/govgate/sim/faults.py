"""Seeded fault plans, context-aware injection and the ground-truth ledger."""

from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

from govgate.matcher import PortfolioState, Side, TradeOrder
from govgate.sim.agents import AgentSpec, DayState


class FaultKind(str, Enum):
    OVERSIZED_POSITION = "oversized_position"
    LOW_CASH_BUY = "low_cash_buy"
    SHORT_SALE = "short_sale"
    RSI_EXTREME = "rsi_extreme"
    OVERTRADING_BURST = "overtrading_burst"


class AttackFamily(str, Enum):
    PROMPT_INJECTION = "prompt_injection"
    AMBIGUOUS_PHRASING = "ambiguous_phrasing"
    MIMIC_COMPLIANCE = "mimic_compliance"


EXPECTED_RULE = {
    FaultKind.OVERSIZED_POSITION: "R1",
    FaultKind.OVERTRADING_BURST: "R2",
    FaultKind.LOW_CASH_BUY: "R3",
    FaultKind.SHORT_SALE: "R4",
    FaultKind.RSI_EXTREME: "R5",
}
COERCIVE_KINDS = frozenset({FaultKind.OVERSIZED_POSITION, FaultKind.LOW_CASH_BUY, FaultKind.SHORT_SALE})

DEFAULT_PARAMS: Mapping[FaultKind, Mapping[str, float]] = {
    FaultKind.OVERSIZED_POSITION: {"fraction": 0.08},
    FaultKind.LOW_CASH_BUY: {"quantity": 1},
    FaultKind.SHORT_SALE: {"excess": 5},
    FaultKind.RSI_EXTREME: {"quantity": 1},
    FaultKind.OVERTRADING_BURST: {"count": 55},
}

# Each fault kind is submitted by a dedicated adversary whose starting book
# makes the fault meaningful (e.g. a thin cash balance for low-cash buys).
ADVERSARIES: Mapping[FaultKind, AgentSpec] = {
    FaultKind.OVERSIZED_POSITION: AgentSpec("adv_oversize", "adversary", cash=10_000.0),
    FaultKind.LOW_CASH_BUY: AgentSpec("adv_lowcash", "adversary", cash=450.0, holdings={"*": 10}),
    FaultKind.SHORT_SALE: AgentSpec("adv_short", "adversary", cash=10_000.0),
    FaultKind.RSI_EXTREME: AgentSpec("adv_rsi", "adversary", cash=10_000.0, holdings={"*": 3}),
    FaultKind.OVERTRADING_BURST: AgentSpec("adv_burst", "adversary", cash=10_000.0),
}


def adversary_books(assets: Sequence[str], adversaries: Mapping[FaultKind, AgentSpec] = ADVERSARIES) -> dict[str, PortfolioState]:
    out = {}
    for spec in adversaries.values():
        holdings = {}
        for asset in assets:
            n = spec.holdings.get(asset, spec.holdings.get("*", 0))
            if n:
                holdings[asset] = int(n)
        out[spec.id] = PortfolioState(float(spec.cash or 0.0), holdings)
    return out


@dataclass(frozen=True)
class FaultEntry:
    fault_id: str
    day: int
    asset: str
    kind: FaultKind
    params: Mapping[str, float] = field(default_factory=dict)

    @property
    def expected_rule(self) -> str:
        return EXPECTED_RULE[self.kind]


@dataclass(frozen=True)
class TextFault:
    fault_id: str
    family: AttackFamily
    payload: str
    expected_rule: str
    catalog_id: str


@dataclass(frozen=True)
class FaultPlan:
    seed: int
    entries: tuple[FaultEntry, ...] = ()
    text_entries: tuple[TextFault, ...] = ()

    def for_day(self, day: int) -> list[FaultEntry]:
        return [e for e in self.entries if e.day == day]


def plan_faults(
    seed: int,
    days: Sequence[int],
    assets: Sequence[str],
    per_day: float = 1.0,
    kinds: Sequence[FaultKind | str] = tuple(FaultKind),
) -> FaultPlan:
    """Draw about ``per_day`` faults for each trading day.

    The integer part is injected every day; the fractional part is the
    probability of one extra fault.
    """
    rng = random.Random(seed)
    kinds = [FaultKind(k) for k in kinds]
    whole, frac = int(per_day), per_day - int(per_day)
    entries = []
    for day in days:
        n = whole + (1 if rng.random() < frac else 0)
        for _ in range(n):
            kind = rng.choice(kinds)
            asset = rng.choice(list(assets))
            entries.append(FaultEntry(f"F{len(entries) + 1:05d}", day, asset, kind, dict(DEFAULT_PARAMS[kind])))
    return FaultPlan(seed, tuple(entries))


def text_faults(catalog: Iterable[Mapping], families: Iterable[str] | None = None) -> tuple[TextFault, ...]:
    """Text-bearing catalog entries as ledgered faults."""
    allowed = set(families) if families is not None else None
    out = []
    for item in catalog:
        if item.get("kind", "text") != "text":
            continue
        if allowed is not None and item["family"] not in allowed:
            continue
        out.append(TextFault(f"T{len(out) + 1:05d}", AttackFamily(item["family"]), item["payload"], item["expected_rule"], item["id"]))
    return tuple(out)


# -- ledger ---------------------------------------------------------------

LEDGER_COLUMNS = (
    "run_id",
    "fault_id",
    "day",
    "date",
    "agent_id",
    "asset",
    "fault_kind",
    "expected_rule",
    "status",
    "action_keys",
)


class LedgerStatus(str, Enum):
    PENDING = "pending"
    APPLIED = "applied"
    INAPPLICABLE = "inapplicable"


@dataclass(frozen=True)
class LedgerRow:
    run_id: str
    fault_id: str
    day: int
    date: str
    agent_id: str
    asset: str
    fault_kind: str
    expected_rule: str
    status: LedgerStatus = LedgerStatus.PENDING
    action_keys: tuple[str, ...] = ()

    @property
    def applicable(self) -> bool:
        return self.status is LedgerStatus.APPLIED

    def row(self) -> list[str]:
        return [
            self.run_id,
            self.fault_id,
            str(self.day),
            self.date,
            self.agent_id,
            self.asset,
            self.fault_kind,
            self.expected_rule,
            self.status.value,
            ";".join(self.action_keys),
        ]


class InjectionLedger:
    """Ground truth: every planned fault is recorded before the run starts."""

    def __init__(self, run_id: str, rows: Iterable[LedgerRow] = ()) -> None:
        self.run_id = run_id
        self._rows: dict[str, LedgerRow] = {}
        for r in rows:
            self._rows[r.fault_id] = r

    def record(self, row: LedgerRow) -> None:
        if row.fault_id in self._rows:
            raise ValueError(f"duplicate fault id {row.fault_id}")
        self._rows[row.fault_id] = row

    def mark(self, fault_id: str, status: LedgerStatus, action_keys: Sequence[str] = (), **changes) -> None:
        self._rows[fault_id] = replace(self._rows[fault_id], status=status, action_keys=tuple(action_keys), **changes)

    @property
    def rows(self) -> list[LedgerRow]:
        return list(self._rows.values())

    def __len__(self) -> int:
        return len(self._rows)

    def get(self, fault_id: str) -> LedgerRow:
        return self._rows[fault_id]

    def dumps(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LEDGER_COLUMNS)
        for r in self._rows.values():
            w.writerow(r.row())
        return buf.getvalue()

    @classmethod
    def read(cls, source: IO[str] | str | Path) -> "InjectionLedger":
        if isinstance(source, (str, Path)):
            with open(source, newline="", encoding="utf-8") as fh:
                return cls.read(fh)
        rows = []
        reader = csv.reader(source)
        header = next(reader, None)
        if header is None or tuple(header) != LEDGER_COLUMNS:
            raise ValueError("not an injection ledger")
        for f in reader:
            if not f:
                continue
            rows.append(
                LedgerRow(f[0], f[1], int(f[2]), f[3], f[4], f[5], f[6], f[7], LedgerStatus(f[8]), tuple(k for k in f[9].split(";") if k))
            )
        run_ids = {r.run_id for r in rows}
        if len(run_ids) > 1:
            raise ValueError(f"ledger mixes run ids {sorted(run_ids)}")
        return cls(run_ids.pop() if run_ids else "", rows)


# -- context-aware materialization ----------------------------------------


@dataclass(frozen=True)
class InjectedOrder:
    order: TradeOrder
    harmful: bool


def _pick_extreme(entry: FaultEntry, state: DayState) -> tuple[str, float] | None:
    candidates = [entry.asset] + sorted(a for a in state.rsi if a != entry.asset)
    for asset in candidates:
        r = state.rsi[asset]
        if r > 80 or r < 20:
            return asset, r
    return None


def materialize(entry: FaultEntry, state: DayState) -> TradeOrder | None:
    """The order a single-shot fault submits given live state, or None if inapplicable.

    Burst faults are driven step by step through :func:`burst_step`.
    """
    p = entry.params
    close = state.closes[entry.asset]
    pf = state.portfolio
    if entry.kind is FaultKind.OVERSIZED_POSITION:
        qty = math.ceil(float(p.get("fraction", 0.08)) * state.equity / close)
        return TradeOrder(entry.asset, Side.BUY, max(qty, 1), close)
    if entry.kind is FaultKind.LOW_CASH_BUY:
        if pf.cash >= 500:
            return None
        return TradeOrder(entry.asset, Side.BUY, int(p.get("quantity", 1)), close)
    if entry.kind is FaultKind.SHORT_SALE:
        return TradeOrder(entry.asset, Side.SELL, pf.shares(entry.asset) + int(p.get("excess", 5)), close)
    if entry.kind is FaultKind.RSI_EXTREME:
        picked = _pick_extreme(entry, state)
        if picked is None:
            return None
        asset, r = picked
        qty = int(p.get("quantity", 1))
        if r > 80:
            return TradeOrder(asset, Side.BUY, qty, state.closes[asset])
        if pf.shares(asset) >= qty:
            return TradeOrder(asset, Side.SELL, qty, state.closes[asset])
        return None
    raise ValueError(f"{entry.kind.value} is not a single-shot fault")


def burst_step(entry: FaultEntry, state: DayState, limit: int = 50) -> InjectedOrder:
    """Next 1-share order of an overtrading burst.

    Alternates buy and sell so holdings never go negative. Orders past the
    daily limit (counting the candidate itself) are the harmful ones.
    """
    close = state.closes[entry.asset]
    held = state.portfolio.shares(entry.asset)
    side = Side.SELL if held > 0 else Side.BUY
    realized = state.portfolio.trades_today.get(entry.asset, 0)
    return InjectedOrder(TradeOrder(entry.asset, side, 1, close), harmful=realized + 1 > limit)
