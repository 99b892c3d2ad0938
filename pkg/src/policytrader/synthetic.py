"""Deterministic synthetic tick streams for desk-scale experiments.

Ticks are evenly spaced in time. Each tick carries the same dollar value,
``daily_dollar_volume / ticks_per_day``, so the dollar-bar threshold
settles at ``daily_dollar_volume / tgt``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from datetime import timedelta
from typing import TextIO

import numpy as np

from .config import ConfigError
from .market_data import Trade, parse_timestamp, write_ticks

GENERATORS = ("sine", "grw", "regime")


@dataclass(frozen=True)
class SyntheticSpec:
    generator: str = "sine"
    seed: int = 0
    start: str = "2020-01-01T00:00:00+00:00"
    days: int = 400
    ticks_per_day: int = 288
    start_price: float = 100.0
    daily_dollar_volume: float = 5_000_000.0
    volume_jitter: float = 0.0  # relative uniform jitter on each tick's volume
    amplitude: float = 0.05  # sine: log-price amplitude
    period_days: float = 8.0
    phase: float = 0.0
    noise: float = 0.0  # sine: iid log-price noise per tick
    drift: float = 0.0  # grw/regime: log drift per day
    volatility: float = 0.02  # grw/regime: log volatility per day
    regime_days: float = 30.0  # regime: days between drift sign flips

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ConfigError("generator", f"must be one of {', '.join(GENERATORS)}, got {self.generator!r}")
        for name in ("days", "ticks_per_day", "start_price", "daily_dollar_volume", "period_days", "regime_days"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, f"must be > 0, got {getattr(self, name)}")
        for name in ("amplitude", "noise", "volatility", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(name, f"must be >= 0, got {getattr(self, name)}")
        if not 0 <= self.volume_jitter < 1:
            raise ConfigError("volume_jitter", f"must lie in [0, 1), got {self.volume_jitter}")
        try:
            parse_timestamp(self.start)
        except ValueError as exc:
            raise ConfigError("start", str(exc)) from None


_TYPES = {f.name: {"int": int, "float": float, "str": str}[f.type] for f in fields(SyntheticSpec)}


def parse_synthetic_spec(source: TextIO | str) -> SyntheticSpec:
    text = source.read() if hasattr(source, "read") else source
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(key, "unknown key")
        try:
            values[key] = _TYPES[key](value)
        except ValueError:
            raise ConfigError(key, f"cannot parse {value!r}") from None
    return SyntheticSpec(**values)


def load_synthetic_spec(path: str) -> SyntheticSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_synthetic_spec(fh)


def log_prices(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Log price relative to ``start_price`` at every tick."""
    n = spec.days * spec.ticks_per_day
    t_days = np.arange(n) / spec.ticks_per_day
    if spec.generator == "sine":
        path = spec.amplitude * np.sin(2.0 * math.pi * t_days / spec.period_days + spec.phase)
        if spec.noise > 0:
            path = path + spec.noise * rng.standard_normal(n)
        return path
    dt = 1.0 / spec.ticks_per_day
    drift = np.full(n, spec.drift)
    if spec.generator == "regime":
        drift = np.where(np.floor(t_days / spec.regime_days) % 2 == 0, spec.drift, -spec.drift)
    steps = drift * dt + spec.volatility * math.sqrt(dt) * rng.standard_normal(n)
    steps[0] = 0.0
    return np.cumsum(steps)


def generate_synthetic(spec: SyntheticSpec, seed: int | None = None) -> list[Trade]:
    """Tick stream for ``spec``; ``seed`` overrides ``spec.seed``."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    prices = spec.start_price * np.exp(log_prices(spec, rng))
    dollars = spec.daily_dollar_volume / spec.ticks_per_day
    if spec.volume_jitter > 0:
        dollars = dollars * rng.uniform(1 - spec.volume_jitter, 1 + spec.volume_jitter, prices.size)
    volumes = np.broadcast_to(dollars, prices.shape) / prices
    start = parse_timestamp(spec.start)
    step_us = 86_400_000_000 // spec.ticks_per_day
    return [
        Trade(start + timedelta(microseconds=k * step_us), float(p), float(v))
        for k, (p, v) in enumerate(zip(prices, volumes))
    ]


def write_synthetic(spec: SyntheticSpec, path: str, seed: int | None = None) -> int:
    trades = generate_synthetic(spec, seed)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_ticks(trades, fh)
    return len(trades)
