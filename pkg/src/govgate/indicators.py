"""Technical indicators used by trading predicates."""

from __future__ import annotations

from typing import Sequence


class InsufficientData(ValueError):
    pass


def compute_rsi(closes: Sequence[float], period: int = 14) -> float:
    """Wilder-smoothed relative strength index of the last close.

    The first average gain/loss is the simple mean of the first ``period``
    changes; later changes are folded in with Wilder's recursion
    ``avg = (avg * (period - 1) + x) / period``.

    A window with neither gains nor losses returns 50.0.

    Raises:
        InsufficientData: fewer than ``period + 1`` closes.
    """
    if period < 1:
        raise ValueError("period must be >= 1")
    if len(closes) < period + 1:
        raise InsufficientData(f"need {period + 1} closes, got {len(closes)}")

    gains = losses = 0.0
    for i in range(1, period + 1):
        change = closes[i] - closes[i - 1]
        if change > 0:
            gains += change
        else:
            losses -= change
    avg_gain, avg_loss = gains / period, losses / period

    for i in range(period + 1, len(closes)):
        change = closes[i] - closes[i - 1]
        avg_gain = (avg_gain * (period - 1) + max(change, 0.0)) / period
        avg_loss = (avg_loss * (period - 1) + max(-change, 0.0)) / period

    if avg_loss == 0.0:
        return 50.0 if avg_gain == 0.0 else 100.0
    return 100.0 - 100.0 / (1.0 + avg_gain / avg_loss)
