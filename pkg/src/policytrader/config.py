"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from typing import TextIO

from .agents import AgentConfig
from .backtest import EarlyStopConfig, ExperimentSpec, SplitSpec
from .environment import RewardParams


class ConfigError(ValueError):
    """A config key is unknown or its value is outside the allowed domain."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ExperimentConfig:
    data_path: str = ""
    synthetic_spec: str = ""
    algorithm: str = "PG"
    seq_kind: str = "CNN"
    risk_sensitivity: float = 0.0
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    batch_size: int = 128
    replay_size: int = 1000
    cost_rate: float = 0.0002
    explore_init: float = 1.0
    explore_decay: float = 0.9
    explore_min: float = 0.01
    n_obs: int = 20
    lookback: int = 60
    bars_per_day: float = 5.0
    initial_threshold: float = 1_000_000.0
    weight_decay: float = 0.001
    dropout: float = 0.2
    clip_norm: float = 1.0
    max_epochs: int = 100
    check_every: int = 10
    train_frac: float = 0.25
    val_frac: float = 0.25
    test_frac: float = 0.5
    window_mode: str = "expanding"
    fifo_size: int = 1000
    seed: int = 0
    runs: int = 10
    out_dir: str = "results"
    workers: int = 1
    bars_per_year: float = 0.0  # 0 means 252 * bars_per_day

    def __post_init__(self):
        validate(self)

    @property
    def annual_bars(self) -> float:
        return self.bars_per_year or 252.0 * self.bars_per_day

    def experiment_spec(self) -> ExperimentSpec:
        fifo = self.window_mode == "fifo"
        return ExperimentSpec(
            algorithm=self.algorithm,
            seq_kind=self.seq_kind,
            n_obs=self.n_obs,
            runs=self.runs,
            master_seed=self.seed,
            bars_per_year=self.annual_bars,
            reward=RewardParams(self.cost_rate, self.risk_sensitivity, self.lookback),
            agent=AgentConfig(
                actor_lr=self.actor_lr,
                critic_lr=self.critic_lr,
                batch_size=self.batch_size,
                replay_size=min(self.replay_size, self.fifo_size) if fifo else self.replay_size,
                explore_init=self.explore_init,
                explore_decay=self.explore_decay,
                explore_min=self.explore_min,
                weight_decay=self.weight_decay,
                clip_norm=self.clip_norm,
                dropout=self.dropout,
            ),
            split=SplitSpec(self.train_frac, self.val_frac, self.test_frac),
            early=EarlyStopConfig(self.check_every, self.max_epochs),
        )


_POSITIVE = {"actor_lr", "critic_lr", "batch_size", "replay_size", "n_obs", "bars_per_day",
             "initial_threshold", "clip_norm", "max_epochs", "check_every", "fifo_size", "runs", "workers"}
_NON_NEGATIVE = {"risk_sensitivity", "explore_init", "explore_min", "weight_decay", "bars_per_year", "seed"}
_UNIT = {"cost_rate", "explore_decay"}
_CHOICES = {"algorithm": ("PG", "AC"), "seq_kind": ("CNN", "LSTM"), "window_mode": ("expanding", "fifo")}


def validate(cfg: ExperimentConfig) -> None:
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, float) and not math.isfinite(v):
            raise ConfigError(f.name, "must be finite")
        if f.name in _POSITIVE and not v > 0:
            raise ConfigError(f.name, f"must be > 0, got {v}")
        if f.name in _NON_NEGATIVE and v < 0:
            raise ConfigError(f.name, f"must be >= 0, got {v}")
        if f.name in _UNIT and not 0 <= v <= 1:
            raise ConfigError(f.name, f"must lie in [0, 1], got {v}")
        if f.name in _CHOICES and v not in _CHOICES[f.name]:
            raise ConfigError(f.name, f"must be one of {', '.join(_CHOICES[f.name])}, got {v!r}")
    if not 0 <= cfg.dropout < 1:
        raise ConfigError("dropout", f"must lie in [0, 1), got {cfg.dropout}")
    if cfg.lookback < 2:
        raise ConfigError("lookback", f"must be >= 2, got {cfg.lookback}")
    if cfg.replay_size < cfg.batch_size:
        raise ConfigError("replay_size", "must be at least batch_size")
    if cfg.seq_kind == "CNN" and cfg.n_obs < 6:
        raise ConfigError("n_obs", "the CNN extractor needs n_obs >= 6")
    fracs = (cfg.train_frac, cfg.val_frac, cfg.test_frac)
    if any(f <= 0 for f in fracs) or not math.isclose(sum(fracs), 1.0, abs_tol=1e-9):
        raise ConfigError("train_frac", f"split fractions must be positive and sum to 1, got {fracs}")
    if cfg.data_path and cfg.synthetic_spec:
        raise ConfigError("data_path", "give either data_path or synthetic_spec, not both")


def _coerce(key: str, kind: type, text: str):
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {kind.__name__}") from None
    return text


_TYPES = {f.name: {"int": int, "float": float, "str": str}[f.type] for f in fields(ExperimentConfig)}


def parse_config(source: TextIO | str) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are ignored."""
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
        values[key] = _coerce(key, _TYPES[key], value)
    return ExperimentConfig(**values)


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh)


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def replace(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return dataclasses.replace(cfg, **changes)
