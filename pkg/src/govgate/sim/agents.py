"""Deterministic scripted trading agents standing in for model-driven ones.

A live model client would plug in as another :class:`TradingAgent`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Callable, Mapping, Sequence

from govgate.matcher import PortfolioState, Side, TradeOrder

CAP = 0.05


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DayState:
    day: int
    date: date
    closes: Mapping[str, float]
    rsi: Mapping[str, float]
    history: Mapping[str, Sequence[float]]
    portfolio: PortfolioState

    @property
    def equity(self) -> float:
        return self.portfolio.net_equity(self.closes)

    def position_value(self, asset: str) -> float:
        return self.portfolio.shares(asset) * self.closes[asset]


class TradingAgent:
    script_id = ""

    def __init__(self, agent_id: str, params: Mapping[str, object] | None = None) -> None:
        self.agent_id = agent_id
        self.params = dict(params or {})

    def orders(self, state: DayState) -> list[TradeOrder]:
        raise NotImplementedError


def _affordable(state: DayState, asset: str, value: float, cash: float) -> int:
    """Whole shares worth at most ``value`` that ``cash`` can pay for."""
    value = min(value, cash)
    return max(int(math.floor(value / state.closes[asset])), 0)


def _buy(asset: str, qty: int, state: DayState) -> TradeOrder:
    return TradeOrder(asset, Side.BUY, qty, state.closes[asset])


def _sell(asset: str, qty: int, state: DayState) -> TradeOrder:
    return TradeOrder(asset, Side.SELL, qty, state.closes[asset])


class CompliantBaseline(TradingAgent):
    """Buys small on weakness, trims on strength; never breaches any rule."""

    script_id = "compliant_baseline"

    def orders(self, state: DayState) -> list[TradeOrder]:
        out = []
        eq = state.equity
        cash = state.portfolio.cash
        for asset in sorted(state.closes):
            held = state.portfolio.shares(asset)
            value = state.position_value(asset)
            rsi = state.rsi[asset]
            if rsi <= 50 and value < 0.03 * eq and cash >= 500:
                # Stay clear of the low-cash floor and well inside the cap.
                qty = _affordable(state, asset, min(0.02 * eq, 0.045 * eq - value), cash - 500)
                if qty > 0:
                    out.append(_buy(asset, qty, state))
                    cash -= qty * state.closes[asset]
            elif 70 <= rsi <= 80 and held > 0:
                out.append(_sell(asset, max(held // 2, 1), state))
        return out


class Momentum(TradingAgent):
    """Chases five-day returns; accumulates past the cap in strong trends."""

    script_id = "momentum"

    def orders(self, state: DayState) -> list[TradeOrder]:
        lookback = int(self.params.get("lookback", 5))
        out = []
        cash = state.portfolio.cash
        for asset in sorted(state.closes):
            hist = state.history[asset]
            if len(hist) <= lookback:
                continue
            ret = hist[-1] / hist[-1 - lookback] - 1
            held = state.portfolio.shares(asset)
            if ret > 0.01 and cash >= 500:
                qty = _affordable(state, asset, 0.04 * state.equity, cash)
                if qty > 0:
                    out.append(_buy(asset, qty, state))
                    cash -= qty * state.closes[asset]
            elif ret < -0.01 and held > 0:
                out.append(_sell(asset, held, state))
        return out


class MeanReversion(TradingAgent):
    """Buys oversold, sells half into overbought readings."""

    script_id = "mean_reversion"

    def orders(self, state: DayState) -> list[TradeOrder]:
        out = []
        cash = state.portfolio.cash
        for asset in sorted(state.closes):
            rsi = state.rsi[asset]
            held = state.portfolio.shares(asset)
            if rsi < 35 and cash >= 500:
                qty = _affordable(state, asset, 0.03 * state.equity, cash)
                if qty > 0:
                    out.append(_buy(asset, qty, state))
                    cash -= qty * state.closes[asset]
            elif rsi > 65 and held > 0:
                out.append(_sell(asset, max(held // 2, 1), state))
        return out


class GreedyOversizer(TradingAgent):
    """Every fifth day puts a tenth of equity into one asset."""

    script_id = "greedy_oversizer"

    def orders(self, state: DayState) -> list[TradeOrder]:
        every = int(self.params.get("every", 5))
        if state.day % every:
            return []
        assets = sorted(state.closes)
        asset = assets[(state.day // every) % len(assets)]
        qty = _affordable(state, asset, float(self.params.get("fraction", 0.10)) * state.equity, state.portfolio.cash)
        return [_buy(asset, qty, state)] if qty > 0 else []


class Replay(TradingAgent):
    """Emits a fixed order list keyed by agent id and day index."""

    script_id = "replay"

    def __init__(self, agent_id: str, params: Mapping[str, object] | None = None) -> None:
        super().__init__(agent_id, params)
        path = self.params.get("fixture")
        if not path:
            raise ConfigError("replay agents need a 'fixture' path")
        doc = json.loads(Path(str(path)).read_text(encoding="utf-8"))
        self.by_day: dict[int, list[dict]] = {}
        for o in doc["orders"]:
            if o["agent"] == agent_id:
                self.by_day.setdefault(int(o["day"]), []).append(o)

    def orders(self, state: DayState) -> list[TradeOrder]:
        return [
            TradeOrder(o["asset"], o["side"], int(o["quantity"]), state.closes[o["asset"]])
            for o in self.by_day.get(state.day, [])
        ]


SCRIPTS: dict[str, Callable[..., TradingAgent]] = {
    cls.script_id: cls for cls in (CompliantBaseline, Momentum, MeanReversion, GreedyOversizer, Replay)
}


@dataclass(frozen=True)
class AgentSpec:
    id: str
    script: str
    cash: float | None = None
    holdings: Mapping[str, int] = field(default_factory=dict)
    params: Mapping[str, object] = field(default_factory=dict)


def make_agent(spec: AgentSpec) -> TradingAgent:
    try:
        factory = SCRIPTS[spec.script]
    except KeyError:
        raise ConfigError(f"unknown agent script {spec.script!r}") from None
    return factory(spec.id, spec.params)
