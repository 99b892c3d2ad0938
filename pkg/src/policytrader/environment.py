"""Single-instrument trading MDP over a bar sequence.

At decision bar ``t`` the agent sees the last ``n`` normalized observations
and its previous weight, picks a weight ``a_t`` in [-1, 1] held over
``(t, t+1]``, and is paid when bar ``t+1`` arrives: the log return of that
position, minus the proportional cost of rebalancing from the drifted
weight into ``a_t``, minus a penalty on the rolling variance of those net
returns.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .market_data import Bar


class DomainError(ValueError):
    """A return or weight update left its mathematical domain."""


@dataclass(frozen=True)
class RewardParams:
    cost_rate: float = 0.0002
    risk_sensitivity: float = 0.0
    lookback: int = 60
    discount: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.cost_rate <= 1.0:
            raise ValueError(f"cost_rate must lie in [0, 1], got {self.cost_rate}")
        if self.risk_sensitivity < 0:
            raise ValueError(f"risk_sensitivity must be >= 0, got {self.risk_sensitivity}")
        if self.lookback < 2:
            raise ValueError(f"lookback must be >= 2, got {self.lookback}")
        if self.discount != 0.0:
            raise ValueError("only the immediate-reward setting (discount 0) is supported")


# -- return algebra -----------------------------------------------------------

def multiplicative_return(p_t: float, p_prev: float) -> float:
    if p_t <= 0 or p_prev <= 0:
        raise DomainError(f"prices must be positive, got {p_t} and {p_prev}")
    return p_t / p_prev - 1.0


def drift_weight(a_prev: float, y: float) -> float:
    """Weight of a position after the price moved by ``y``, before rebalancing."""
    denom = a_prev * y + 1.0
    if denom == 0.0:
        raise DomainError(f"position wiped out: weight {a_prev} with return {y}")
    return a_prev * (1.0 + y) / denom


def gross_return(y: float, a_prev: float) -> float:
    if 1.0 + y <= 0.0:
        raise DomainError(f"log return undefined for y = {y}")
    return math.log1p(y) * a_prev


def net_return(r_gross: float, a_chosen: float, a_drift: float, cost_rate: float) -> float:
    return r_gross - cost_rate * abs(a_chosen - a_drift)


@dataclass
class PositionLedger:
    a_prev: float = 0.0
    a_drift: float = 0.0
    lookback: int = 60
    history: deque = field(default=None)

    def __post_init__(self):
        if self.history is None:
            self.history = deque(maxlen=self.lookback)


def rolling_variance(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.var(np.fromiter(values, dtype=float)))


def risk_adjusted_reward(ledger: PositionLedger, r_net: float, risk_sensitivity: float, lookback: int | None = None) -> float:
    """Append ``r_net`` to the ledger and subtract the variance penalty.

    The window includes the value just appended.
    """
    if lookback is not None and ledger.history.maxlen != lookback:
        ledger.history = deque(ledger.history, maxlen=lookback)
    ledger.history.append(r_net)
    if risk_sensitivity == 0.0:
        return r_net
    return r_net - risk_sensitivity * rolling_variance(ledger.history)


# -- observations ---------------------------------------------------------------

def normalize_observation(bar: Bar, closes: Sequence[float], lookback: int = 60) -> np.ndarray:
    """(close, high, low) as volatility-scaled log returns vs. the last close.

    ``closes`` are the closes strictly before ``bar``; the variance is taken
    over their most recent ``lookback`` log returns.
    """
    if len(closes) < 2:
        raise ValueError("need at least two trailing closes")
    tail = np.asarray(closes[-(lookback + 1):], dtype=float)
    if np.any(tail <= 0) or min(bar.close, bar.high, bar.low) <= 0:
        raise DomainError("prices must be positive")
    var = float(np.var(np.diff(np.log(tail))))
    if var == 0.0:
        return np.zeros(3)
    raw = np.log(np.array([bar.close, bar.high, bar.low]) / tail[-1]) / (var * math.sqrt(lookback))
    return np.clip(raw, -1.0, 1.0)


def normalize_bars(bars: Sequence[Bar], lookback: int = 60) -> np.ndarray:
    """Observation for every bar; rows 0 and 1 (too little history) are NaN."""
    out = np.full((len(bars), 3), np.nan)
    closes = [b.close for b in bars]
    for t in range(2, len(bars)):
        out[t] = normalize_observation(bars[t], closes[max(0, t - lookback - 1):t], lookback)
    return out


@dataclass(frozen=True)
class AgentState:
    window: np.ndarray  # (3, n): rows close/high/low, columns oldest -> newest
    prev_action: float

    def __post_init__(self):
        if self.window.ndim != 2 or self.window.shape[0] != 3:
            raise ValueError(f"window must have shape (3, n), got {self.window.shape}")
        if not -1.0 <= self.prev_action <= 1.0:
            raise ValueError(f"prev_action must lie in [-1, 1], got {self.prev_action}")


def build_state(recent: Sequence[np.ndarray], prev_action: float, n: int = 20) -> AgentState | None:
    """Stack the last ``n`` observations; ``None`` until ``n`` are available."""
    if len(recent) < n:
        return None
    window = np.asarray(recent[-n:], dtype=float).T.copy()
    return AgentState(window=window, prev_action=float(prev_action))


# -- environment ----------------------------------------------------------------

@dataclass(frozen=True)
class StepRecord:
    t: int  # decision bar index
    action: float
    a_drift: float  # weight before rebalancing at t
    y: float  # return of bar t+1 (0 for the liquidation record)
    cost: float
    net: float
    reward: float
    linear_return: float


class TradingEnv:
    """Sequential environment over ``bars[start:stop]``.

    Decisions are taken at bars ``first .. stop-2``; at ``stop-1`` the
    position is liquidated through :meth:`liquidate`. Observations for the
    window may reach back before ``start``.
    """

    def __init__(
        self,
        bars: Sequence[Bar],
        reward: RewardParams | None = None,
        n_obs: int = 20,
        start: int = 0,
        stop: int | None = None,
        observations: np.ndarray | None = None,
    ):
        self.bars = bars
        self.reward = reward or RewardParams()
        self.n_obs = n_obs
        self.stop = len(bars) if stop is None else stop
        self.first = max(start, n_obs + 1)
        if self.first > self.stop - 2:
            raise ValueError(
                f"not enough bars: first decision {self.first}, stop {self.stop} (n_obs={n_obs})"
            )
        self.closes = np.array([b.close for b in bars], dtype=float)
        self.obs = normalize_bars(bars[: self.stop], self.reward.lookback) if observations is None else observations
        self.reset()

    @property
    def decision_indices(self) -> range:
        return range(self.first, self.stop - 1)

    def __len__(self) -> int:
        return self.stop - 1 - self.first

    def window_at(self, t: int) -> np.ndarray:
        return self.obs[t - self.n_obs + 1 : t + 1].T

    def reset(self) -> AgentState:
        self.t = self.first
        self.ledger = PositionLedger(lookback=self.reward.lookback)
        self.records: list[StepRecord] = []
        self.liquidated = False
        return self.state

    @property
    def done(self) -> bool:
        return self.t >= self.stop - 1

    @property
    def state(self) -> AgentState:
        return AgentState(window=self.window_at(self.t), prev_action=self.ledger.a_prev)

    def step(self, action: float) -> tuple[float, AgentState | None]:
        if self.done:
            raise RuntimeError("episode finished; call liquidate()")
        action = float(action)
        if not -1.0 <= action <= 1.0:
            raise ValueError(f"action must lie in [-1, 1], got {action}")
        t = self.t
        p = self.reward
        led = self.ledger
        y = multiplicative_return(self.closes[t + 1], self.closes[t])
        cost = p.cost_rate * abs(action - led.a_drift)
        net = gross_return(y, action) - cost
        reward = risk_adjusted_reward(led, net, p.risk_sensitivity)
        self.records.append(StepRecord(t, action, led.a_drift, y, cost, net, reward, y * action - cost))
        led.a_prev = action
        led.a_drift = drift_weight(action, y)
        self.t = t + 1
        return reward, (None if self.done else self.state)

    def liquidate(self) -> float:
        """Close the position at the final bar and charge the exit cost."""
        if not self.done or self.liquidated:
            raise RuntimeError("liquidate() is only valid once, at the final bar")
        led = self.ledger
        cost = self.reward.cost_rate * abs(led.a_drift)
        reward = risk_adjusted_reward(led, -cost, self.reward.risk_sensitivity)
        self.records.append(StepRecord(self.t, 0.0, led.a_drift, 0.0, cost, -cost, reward, -cost))
        led.a_prev = led.a_drift = 0.0
        self.liquidated = True
        return reward

    def clone(self) -> "TradingEnv":
        """Fresh environment over the same bars, sharing the observation cache."""
        env = TradingEnv.__new__(TradingEnv)
        env.bars, env.reward, env.n_obs = self.bars, self.reward, self.n_obs
        env.stop, env.first, env.closes, env.obs = self.stop, self.first, self.closes, self.obs
        env.reset()
        return env


def run_actions(env: TradingEnv, actions: Sequence[float]) -> list[float]:
    """Drive ``env`` with one action per decision bar; returns every reward incl. liquidation."""
    if len(actions) != len(env):
        raise ValueError(f"expected {len(env)} actions, got {len(actions)}")
    env.reset()
    rewards = [env.step(a)[0] for a in actions]
    rewards.append(env.liquidate())
    return rewards
