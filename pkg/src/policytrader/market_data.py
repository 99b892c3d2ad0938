"""Tick ingestion and dollar-volume bar sampling with an adaptive threshold.

A bar closes on the first trade that pushes the running dollar volume
strictly above the threshold in force. The threshold is the mean daily
dollar volume over the last (up to) 90 completed UTC days divided by the
target number of bars per day.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from typing import Iterable, Iterator, TextIO

SMA_DAYS = 90


class IngestionError(ValueError):
    """A tick file row could not be turned into a valid trade."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Trade:
    timestamp: datetime
    price: float
    volume: float

    def __post_init__(self):
        if not (self.price > 0 and math.isfinite(self.price)):
            raise ValueError(f"trade price must be positive, got {self.price}")
        if not (self.volume > 0 and math.isfinite(self.volume)):
            raise ValueError(f"trade volume must be positive, got {self.volume}")


@dataclass(frozen=True)
class Bar:
    open: float
    high: float
    low: float
    close: float
    volume: float
    dollar_volume: float
    start_ts: datetime
    end_ts: datetime
    threshold: float = 0.0  # threshold in force when the bar closed


@dataclass
class ThresholdState:
    tgt: float = 5.0
    current: float = 1_000_000.0
    daily_dollar_volumes: deque = field(default_factory=lambda: deque(maxlen=SMA_DAYS))

    def __post_init__(self):
        if self.tgt <= 0:
            raise ValueError(f"target bars per day must be positive, got {self.tgt}")
        if self.current <= 0:
            raise ValueError(f"initial threshold must be positive, got {self.current}")
        if not isinstance(self.daily_dollar_volumes, deque) or self.daily_dollar_volumes.maxlen != SMA_DAYS:
            self.daily_dollar_volumes = deque(self.daily_dollar_volumes, maxlen=SMA_DAYS)


def update_threshold(state: ThresholdState, completed_day_total: float) -> ThresholdState:
    """Push one completed day's dollar volume and recompute the threshold in place."""
    if completed_day_total < 0:
        raise ValueError("daily dollar volume cannot be negative")
    state.daily_dollar_volumes.append(float(completed_day_total))
    mean = sum(state.daily_dollar_volumes) / len(state.daily_dollar_volumes)
    # an all-zero history would give a zero threshold; keep the previous one
    if mean > 0:
        state.current = mean / state.tgt
    return state


class BarAccumulator:
    """Running dollar-volume sum and partial OHLCV of the bar being formed."""

    def __init__(self, threshold: ThresholdState):
        self.threshold = threshold
        self._reset()

    def _reset(self) -> None:
        self.chi = 0.0
        self.open = self.high = self.low = None
        self.volume = 0.0
        self.start_ts = None
        self.n_trades = 0

    def accumulate(self, trade: Trade) -> Bar | None:
        p = trade.price
        if self.n_trades == 0:
            self.open = self.high = self.low = p
            self.start_ts = trade.timestamp
        else:
            if p > self.high:
                self.high = p
            if p < self.low:
                self.low = p
        self.n_trades += 1
        self.volume += trade.volume
        self.chi += p * trade.volume
        delta = self.threshold.current
        if self.chi > delta:
            bar = Bar(
                open=self.open,
                high=self.high,
                low=self.low,
                close=p,
                volume=self.volume,
                dollar_volume=self.chi,
                start_ts=self.start_ts,
                end_ts=trade.timestamp,
                threshold=delta,
            )
            self._reset()
            return bar
        return None


def accumulate(acc: BarAccumulator, trade: Trade) -> Bar | None:
    return acc.accumulate(trade)


def _utc_day(ts: datetime) -> date:
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc)
    return ts.date()


def iter_bars(trades: Iterable[Trade], tgt: float = 5.0, initial_threshold: float = 1_000_000.0) -> Iterator[Bar]:
    """Lazily sample bars from an ordered trade stream.

    The threshold is refreshed when the first trade of a new UTC day
    arrives, using only days that have fully elapsed.
    """
    state = ThresholdState(tgt=tgt, current=initial_threshold)
    acc = BarAccumulator(state)
    day = None
    day_total = 0.0
    for trade in trades:
        d = _utc_day(trade.timestamp)
        if day is None:
            day = d
        elif d != day:
            update_threshold(state, day_total)
            # calendar days without a single trade count as zero-volume days
            for _ in range(min((d - day).days - 1, SMA_DAYS)):
                update_threshold(state, 0.0)
            day, day_total = d, 0.0
        day_total += trade.price * trade.volume
        bar = acc.accumulate(trade)
        if bar is not None:
            yield bar


def sample_stream(trades: Iterable[Trade], tgt: float = 5.0, initial_threshold: float = 1_000_000.0) -> list[Bar]:
    """Dollar bars for a whole stream; a trailing partial bar is dropped."""
    return list(iter_bars(trades, tgt=tgt, initial_threshold=initial_threshold))


# -- tick CSV ---------------------------------------------------------------

TICK_HEADER = ["timestamp", "price", "volume"]


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError("timestamp lacks a UTC offset")
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat(timespec="microseconds")


def load_ticks(source: TextIO | io.BufferedIOBase | str) -> list[Trade]:
    """Read a tick CSV (``timestamp,price,volume``) into trades.

    ``source`` may be a path, a text stream or a binary stream (decoded as
    UTF-8). Raises :class:`IngestionError` naming the offending line.
    """
    if isinstance(source, str):
        with open(source, encoding="utf-8", newline="") as fh:
            return load_ticks(fh)
    if isinstance(source, (io.BufferedIOBase, io.RawIOBase)):
        source = io.TextIOWrapper(source, encoding="utf-8", newline="")

    reader = csv.reader(source)
    header = next(reader, None)
    if header is None:
        return []
    if [h.strip().lstrip("﻿") for h in header] != TICK_HEADER:
        raise IngestionError(1, f"expected header {','.join(TICK_HEADER)}, got {','.join(header)}")
    trades: list[Trade] = []
    last = None
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 3:
            raise IngestionError(line, f"expected 3 fields, got {len(row)}")
        try:
            ts = parse_timestamp(row[0])
            price = float(row[1])
            volume = float(row[2])
        except ValueError as exc:
            raise IngestionError(line, str(exc)) from None
        if not (price > 0 and math.isfinite(price)):
            raise IngestionError(line, f"non-positive price {row[1].strip()}")
        if not (volume > 0 and math.isfinite(volume)):
            raise IngestionError(line, f"non-positive volume {row[2].strip()}")
        if last is not None and ts < last:
            raise IngestionError(line, "timestamp decreases")
        last = ts
        trades.append(Trade(ts, price, volume))
    return trades


def write_ticks(trades: Iterable[Trade], fh: TextIO) -> None:
    fh.write(",".join(TICK_HEADER) + "\n")
    for t in trades:
        fh.write(f"{format_timestamp(t.timestamp)},{t.price!r},{t.volume!r}\n")
