"""Walk-forward evaluation, performance metrics and multi-run experiments."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .agents import Agent, AgentConfig, EpisodeLog, make_agent
from .environment import RewardParams, TradingEnv, normalize_bars
from .market_data import Bar, format_timestamp

log = logging.getLogger(__name__)

TRADING_DAYS = 252
SIG_DIGITS = 9


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.25
    val_frac: float = 0.25
    test_frac: float = 0.5

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fracs) or not math.isclose(sum(fracs), 1.0, abs_tol=1e-9):
            raise ValueError(f"split fractions must be positive and sum to 1, got {fracs}")

    def boundaries(self, n_bars: int) -> tuple[int, int]:
        """``(train_end, val_end)``: train is ``[0, train_end)``, val ``[train_end, val_end)``."""
        train_end = int(math.floor(n_bars * self.train_frac))
        val_end = int(math.floor(n_bars * (self.train_frac + self.val_frac)))
        return train_end, val_end


@dataclass(frozen=True)
class EarlyStopConfig:
    check_every: int = 10
    max_epochs: int = 100

    def __post_init__(self):
        if self.check_every < 1 or self.max_epochs < 1:
            raise ValueError("check_every and max_epochs must be positive")


@dataclass(frozen=True)
class MetricsReport:
    expected_return: float
    std_return: float
    sharpe: float | None
    mdd: float
    hit: float
    cumulative_log_return: float = 0.0
    n_steps: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


# -- metrics ------------------------------------------------------------------------

def linear_step_return(y: float, a_prev: float, a_chosen: float, a_drift: float, cost_rate: float) -> float:
    """Net linear return of holding ``a_prev`` over a bar with return ``y``.

    ``a_chosen``/``a_drift`` describe the rebalancing that established
    the position.
    """
    return y * a_prev - cost_rate * abs(a_chosen - a_drift)


def equity_curve(step_returns: Sequence[float]) -> np.ndarray:
    """Compounded value starting at 1; a step with ``1 + rho <= 0`` ends at 0."""
    curve = [1.0]
    for rho in step_returns:
        growth = 1.0 + rho
        if growth <= 0.0:
            log.warning("equity wiped out (step return %.6g); curve terminated", rho)
            curve.append(0.0)
            break
        curve.append(curve[-1] * growth)
    return np.array(curve)


def total_return(step_returns: Sequence[float]) -> float:
    return float(equity_curve(step_returns)[-1] - 1.0)


def annualize(per_bar_mean: float, per_bar_std: float, bars_per_year: float) -> tuple[float, float]:
    if bars_per_year <= 0:
        raise ValueError("bars_per_year must be positive")
    return per_bar_mean * bars_per_year, per_bar_std * math.sqrt(bars_per_year)


def sharpe(expected: float, std: float) -> float | None:
    if std <= 0:
        return None
    return expected / std


def max_drawdown(curve: Sequence[float]) -> float:
    values = np.asarray(curve, dtype=float)
    if values.size == 0:
        raise ValueError("max_drawdown needs a non-empty curve")
    peaks = np.maximum.accumulate(values)
    with np.errstate(invalid="ignore", divide="ignore"):
        dd = np.where(peaks > 0, (peaks - values) / peaks, 0.0)
    return float(dd.max())


def hit_rate(step_returns: Sequence[float]) -> float:
    r = np.asarray(step_returns, dtype=float)
    if r.size == 0:
        raise ValueError("hit_rate needs at least one return")
    return float(np.count_nonzero(r > 0) / r.size)


def compute_metrics(step_returns: Sequence[float], bars_per_year: float) -> MetricsReport:
    r = np.asarray(step_returns, dtype=float)
    curve = equity_curve(r)
    mean, std = annualize(float(r.mean()), float(r.std()), bars_per_year)
    return MetricsReport(
        expected_return=mean,
        std_return=std,
        sharpe=sharpe(mean, std),
        mdd=max_drawdown(curve),
        hit=hit_rate(r),
        cumulative_log_return=float(np.log(curve[-1])) if curve[-1] > 0 else float("-inf"),
        n_steps=int(r.size),
    )


def step_returns(env: TradingEnv) -> np.ndarray:
    """Linear net returns of every record, liquidation included."""
    return np.array([rec.linear_return for rec in env.records])


def buy_and_hold_baseline(env: TradingEnv, bars_per_year: float) -> tuple[MetricsReport, np.ndarray]:
    """Constant full-long position over the env's decision range, with entry and exit costs."""
    env = env.clone()
    for _ in env.decision_indices:
        env.step(1.0)
    env.liquidate()
    r = step_returns(env)
    return compute_metrics(r, bars_per_year), equity_curve(r)


# -- training -----------------------------------------------------------------------

@dataclass
class TrainingLog:
    epochs: int = 0
    checks: list = field(default_factory=list)  # (epoch, validation score)
    best_epoch: int = 0
    best_score: float = float("-inf")


def train_with_early_stopping(agent: Agent, train_env: TradingEnv, val_env: TradingEnv,
                              cfg: EarlyStopConfig) -> TrainingLog:
    """Train for whole passes over ``train_env``, checking ``val_env`` every ``check_every`` epochs.

    Stops at the first check that does not beat the best score and restores
    the best snapshot. A final check runs at ``max_epochs`` if it is not a
    multiple of the cadence.
    """
    out = TrainingLog()
    best = None
    for epoch in range(1, cfg.max_epochs + 1):
        agent.train_episode(train_env)
        out.epochs = epoch
        if epoch % cfg.check_every and epoch != cfg.max_epochs:
            continue
        score = agent.evaluate(val_env).total_reward
        out.checks.append((epoch, score))
        log.debug("epoch %d validation reward %.6g", epoch, score)
        if score > out.best_score:
            out.best_score, out.best_epoch = score, epoch
            best = agent.snapshot()
        else:
            break
    if best is not None:
        agent.restore(best)
    return out


@dataclass
class WalkForwardResult:
    test_log: EpisodeLog
    test_env: TradingEnv
    training: TrainingLog
    bounds: tuple  # (train_end, val_end, n_bars)

    @property
    def returns(self) -> np.ndarray:
        return step_returns(self.test_env)


def make_envs(bars: Sequence[Bar], split: SplitSpec, reward: RewardParams, n_obs: int,
              observations: np.ndarray | None = None):
    obs = normalize_bars(bars, reward.lookback) if observations is None else observations
    train_end, val_end = split.boundaries(len(bars))
    train = TradingEnv(bars, reward, n_obs, 0, train_end, observations=obs)
    val = TradingEnv(bars, reward, n_obs, train_end, val_end, observations=obs)
    test = TradingEnv(bars, reward, n_obs, val_end, len(bars), observations=obs)
    return train, val, test


def walk_forward(agent: Agent, bars: Sequence[Bar], split: SplitSpec, reward: RewardParams,
                 early: EarlyStopConfig) -> WalkForwardResult:
    """Train with early stopping, then trade the test split while refitting online.

    Each environment starts flat. Observation rows only depend on bars up to
    their own index, so the decision at test bar ``i`` sees nothing later.
    """
    train_env, val_env, test_env = make_envs(bars, split, reward, agent.n_obs)
    training = train_with_early_stopping(agent, train_env, val_env, early)
    test_log = agent.run_online(test_env)
    return WalkForwardResult(test_log, test_env, training, (train_env.stop, val_env.stop, len(bars)))


# -- experiments ---------------------------------------------------------------------

def run_seed(master_seed: int, run: int) -> np.random.SeedSequence:
    """Per-run seed; independent of how many runs the experiment has."""
    return np.random.SeedSequence(master_seed, spawn_key=(run,))


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), f".{SIG_DIGITS}g")


def _round(x):
    if x is None or isinstance(x, (int, np.integer, str)):
        return x
    x = float(x)
    return float(fmt(x)) if math.isfinite(x) else None


def report_row(report: MetricsReport) -> dict:
    return {k: _round(v) for k, v in report.as_dict().items()}


def average_reports(reports: Sequence[MetricsReport]) -> dict:
    keys = ("expected_return", "std_return", "sharpe", "mdd", "hit", "cumulative_log_return")
    out = {}
    for k in keys:
        vals = [getattr(r, k) for r in reports if getattr(r, k) is not None]
        out[k] = _round(float(np.mean(vals))) if vals else None
    return out


def monthly_log_returns(bars: Sequence[Bar], indices: Sequence[int], returns: Sequence[float]) -> list[tuple[str, float]]:
    """Sum of per-step log growth bucketed by the calendar month of the bar the step ends on."""
    buckets: dict[str, float] = {}
    for t, rho in zip(indices, returns):
        end = bars[min(t + 1, len(bars) - 1)].end_ts
        key = f"{end.year:04d}-{end.month:02d}"
        buckets[key] = buckets.get(key, 0.0) + (math.log1p(rho) if rho > -1 else float("-inf"))
    return sorted(buckets.items())


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_run_artifacts(directory: str, bars: Sequence[Bar], result: WalkForwardResult) -> None:
    os.makedirs(directory, exist_ok=True)
    env = result.test_env
    indices = [rec.t for rec in env.records]
    r = result.returns
    curve = equity_curve(r)
    stamps = [format_timestamp(bars[env.first].end_ts)] + [
        format_timestamp(bars[min(t + 1, len(bars) - 1)].end_ts) for t in indices
    ]
    _write_csv(os.path.join(directory, "equity_curve.csv"), ["timestamp", "equity"],
               [(s, fmt(v)) for s, v in zip(stamps, curve)])
    _write_csv(os.path.join(directory, "actions.csv"), ["timestamp", "action"],
               [(format_timestamp(bars[t].end_ts), fmt(a)) for t, a in zip(result.test_log.indices, result.test_log.actions)])
    _write_csv(os.path.join(directory, "monthly_log_returns.csv"), ["month", "log_return"],
               [(m, fmt(v)) for m, v in monthly_log_returns(bars, indices, r)])


@dataclass(frozen=True)
class ExperimentSpec:
    algorithm: str = "PG"
    seq_kind: str = "CNN"
    n_obs: int = 20
    runs: int = 10
    master_seed: int = 0
    bars_per_year: float = TRADING_DAYS * 5.0
    reward: RewardParams = field(default_factory=RewardParams)
    agent: AgentConfig = field(default_factory=AgentConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    early: EarlyStopConfig = field(default_factory=EarlyStopConfig)

    @property
    def model_name(self) -> str:
        return f"{self.algorithm}-{self.seq_kind}"


def run_one(spec: ExperimentSpec, bars: Sequence[Bar], run: int) -> WalkForwardResult:
    agent = make_agent(spec.algorithm, spec.seq_kind, spec.n_obs, spec.agent, run_seed(spec.master_seed, run))
    return walk_forward(agent, bars, spec.split, spec.reward, spec.early)


def run_experiment(spec: ExperimentSpec, bars: Sequence[Bar], out_dir: str | None = None,
                   workers: int = 1) -> dict:
    """Walk-forward every run, then average metrics arithmetically across runs.

    Returns the ``metrics.json`` payload; artifacts are written when
    ``out_dir`` is given.
    """
    if workers > 1 and spec.runs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, [spec] * spec.runs, [bars] * spec.runs, range(spec.runs)))
    else:
        results = [run_one(spec, bars, run) for run in range(spec.runs)]

    reports = [compute_metrics(res.returns, spec.bars_per_year) for res in results]
    baseline, _ = buy_and_hold_baseline(results[0].test_env, spec.bars_per_year)
    payload = {
        "model": spec.model_name,
        "risk_sensitivity": spec.reward.risk_sensitivity,
        "runs": [dict(run=i, epochs=res.training.epochs, best_epoch=res.training.best_epoch, **report_row(rep))
                 for i, (res, rep) in enumerate(zip(results, reports))],
        "average": average_reports(reports),
        "buy_and_hold": report_row(baseline),
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for i, res in enumerate(results):
            write_run_artifacts(os.path.join(out_dir, f"run_{i:02d}"), bars, res)
        with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    for i, rep in enumerate(reports):
        log.info("run %d: E[R]=%.4g Std=%.4g Sharpe=%s", i, rep.expected_return, rep.std_return, fmt(rep.sharpe))
    return payload
