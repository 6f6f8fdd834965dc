"""Daily OHLCV bars: CSV ingestion and the seeded synthetic generator.

Run ``python3 -m govgate.sim.market --out DIR`` to regenerate the bundled
dataset; the generator is the oracle for its contents.
"""

from __future__ import annotations

import argparse
import csv
import io
import random
from dataclasses import dataclass
from datetime import date, timedelta
from importlib import resources
from pathlib import Path
from typing import IO, Mapping, Sequence

from govgate.audit import FormatError

HEADER = ("date", "open", "high", "low", "close", "volume")


class NonMonotonicDates(ValueError):
    pass


@dataclass(frozen=True)
class MarketBar:
    date: date
    open: float
    high: float
    low: float
    close: float
    volume: int

    def __post_init__(self) -> None:
        if not (self.low <= self.open <= self.high and self.low <= self.close <= self.high):
            raise ValueError(f"bar {self.date}: low <= open, close <= high violated")
        if self.volume < 0:
            raise ValueError(f"bar {self.date}: negative volume")

    def row(self) -> list[str]:
        return [self.date.isoformat(), f"{self.open:.2f}", f"{self.high:.2f}", f"{self.low:.2f}", f"{self.close:.2f}", str(self.volume)]


def read_bars(source: IO[str]) -> list[MarketBar]:
    """Parse one asset's CSV; rows are sorted by date and duplicates rejected."""
    reader = csv.reader(source)
    bars: list[MarketBar] = []
    header_seen = False
    for fields in reader:
        line = reader.line_num
        if not fields or not "".join(fields).strip():
            continue
        fields = [f.strip() for f in fields]
        if not header_seen:
            if tuple(f.lower() for f in fields) != HEADER:
                raise FormatError(f"expected header {','.join(HEADER)}", line)
            header_seen = True
            continue
        if len(fields) != len(HEADER):
            raise FormatError(f"expected {len(HEADER)} fields, got {len(fields)}", line)
        try:
            bars.append(
                MarketBar(
                    date.fromisoformat(fields[0]),
                    float(fields[1]),
                    float(fields[2]),
                    float(fields[3]),
                    float(fields[4]),
                    int(fields[5]),
                )
            )
        except ValueError as exc:
            raise FormatError(str(exc), line) from None
    bars.sort(key=lambda b: b.date)
    for prev, cur in zip(bars, bars[1:]):
        if cur.date == prev.date:
            raise NonMonotonicDates(f"duplicate date {cur.date}")
    return bars


def load_market_csv(source: str | Path) -> dict[str, list[MarketBar]]:
    """Load a single ``ASSET.csv`` file or a directory of them.

    The asset ticker is the file stem.
    """
    path = Path(source)
    files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
    if not files:
        raise FileNotFoundError(f"no CSV files in {path}")
    out = {}
    for f in files:
        with f.open(newline="", encoding="utf-8") as fh:
            out[f.stem] = read_bars(fh)
    return out


def bundled_market_dir() -> Path:
    return Path(str(resources.files("govgate.data").joinpath("market")))


def aligned_dates(market: Mapping[str, Sequence[MarketBar]]) -> list[date]:
    """Dates present for every asset, ascending."""
    sets = [set(b.date for b in bars) for bars in market.values()]
    return sorted(set.intersection(*sets)) if sets else []


def business_days(start: date, n: int) -> list[date]:
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return out


def generate_bars(rng: random.Random, start_price: float, dates: Sequence[date]) -> list[MarketBar]:
    """Random walk with drifting segments so the RSI visits both extremes."""
    bars = []
    close = start_price
    drift, left = 0.0, 0
    for d in dates:
        if left == 0:
            drift = rng.choice((0.02, -0.02, 0.0, 0.012, -0.012))
            left = rng.randint(6, 12)
        left -= 1
        o = round(close * (1 + rng.gauss(0, 0.004)), 2)
        c = round(max(o * (1 + drift + rng.gauss(0, 0.012)), 1.0), 2)
        h = round(max(o, c) * (1 + abs(rng.gauss(0, 0.006))), 2)
        lo = round(min(o, c) * (1 - abs(rng.gauss(0, 0.006))), 2)
        bars.append(MarketBar(d, o, h, lo, c, rng.randint(50_000, 500_000)))
        close = c
    return bars


def generate_market(
    seed: int,
    days: int,
    assets: Mapping[str, float] | None = None,
    start: date = date(2024, 1, 2),
) -> dict[str, list[MarketBar]]:
    assets = assets or {"SYNA": 100.0, "SYNB": 50.0}
    rng = random.Random(seed)
    dates = business_days(start, days)
    return {name: generate_bars(rng, price, dates) for name, price in assets.items()}


def dumps_bars(bars: Sequence[MarketBar]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for b in bars:
        w.writerow(b.row())
    return buf.getvalue()


def write_market(market: Mapping[str, Sequence[MarketBar]], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, bars in market.items():
        (out / f"{name}.csv").write_text(dumps_bars(bars), encoding="utf-8")


BUNDLED_SEED = 24
BUNDLED_DAYS = 60


def main(argv: Sequence[str] | None = None) -> None:
    p = argparse.ArgumentParser(description="Generate the synthetic OHLCV dataset.")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=BUNDLED_SEED)
    p.add_argument("--days", type=int, default=BUNDLED_DAYS)
    args = p.parse_args(argv)
    write_market(generate_market(args.seed, args.days), args.out)


if __name__ == "__main__":
    main()
