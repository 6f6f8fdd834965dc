"""Portfolio accounting with same-day close fills."""

from __future__ import annotations

from dataclasses import replace
from typing import Mapping

from govgate.matcher import PortfolioState, Side, TradeOrder
from govgate.sim.market import MarketBar


class ExecutionError(RuntimeError):
    pass


class InsufficientCash(ExecutionError):
    pass


class InsufficientHoldings(ExecutionError):
    pass


def execute_trade(portfolio: PortfolioState, order: TradeOrder, bar: MarketBar | float) -> PortfolioState:
    """Fill ``order`` at the bar's close and return the new portfolio.

    Raises:
        InsufficientCash: a buy costs more than available cash.
        InsufficientHoldings: a sell exceeds the shares held.
    """
    price = bar.close if isinstance(bar, MarketBar) else float(bar)
    held = portfolio.shares(order.asset)
    cost = order.quantity * price
    if order.side is Side.BUY:
        if cost > portfolio.cash + 1e-9:
            raise InsufficientCash(f"buy {order.quantity} {order.asset} costs {cost:.2f}, cash {portfolio.cash:.2f}")
        cash, new_held = portfolio.cash - cost, held + order.quantity
    else:
        if order.quantity > held:
            raise InsufficientHoldings(f"sell {order.quantity} {order.asset} with {held} held")
        cash, new_held = portfolio.cash + cost, held - order.quantity
    holdings = dict(portfolio.holdings)
    holdings[order.asset] = new_held
    trades = dict(portfolio.trades_today)
    trades[order.asset] = trades.get(order.asset, 0) + 1
    # Rounding to cents keeps cash exactly representable across long runs.
    return PortfolioState(round(cash, 2), holdings, trades)


def start_of_day(portfolio: PortfolioState) -> PortfolioState:
    return replace(portfolio, trades_today={})


def equity(portfolio: PortfolioState, closes: Mapping[str, float]) -> float:
    return portfolio.net_equity(closes)
