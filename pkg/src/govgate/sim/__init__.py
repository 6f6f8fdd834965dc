"""Seeded multi-agent simulations under the three governance regimes."""

from govgate.sim.agents import AgentSpec, ConfigError, DayState, make_agent
from govgate.sim.harness import Regime, RunArtifacts, SimConfig, SimRegime, run_essay_sim, run_sim, run_trading_sim
from govgate.sim.market import MarketBar, NonMonotonicDates, load_market_csv
from govgate.sim.portfolio import InsufficientCash, InsufficientHoldings, execute_trade

__all__ = [
    "AgentSpec",
    "ConfigError",
    "DayState",
    "InsufficientCash",
    "InsufficientHoldings",
    "MarketBar",
    "NonMonotonicDates",
    "Regime",
    "RunArtifacts",
    "SimConfig",
    "SimRegime",
    "execute_trade",
    "load_market_csv",
    "make_agent",
    "run_essay_sim",
    "run_sim",
    "run_trading_sim",
]
