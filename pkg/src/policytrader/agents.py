"""Actor-only policy gradient and deterministic actor-critic learners.

Both agents act on a :class:`~policytrader.environment.TradingEnv` one
bar at a time. The policy-gradient agent samples from a Gaussian around
the policy mean and applies a score-function update every ``b`` steps.
The actor-critic agent perturbs the mean with uniform noise, stores
transitions in a replay memory and, once warm, takes one critic and one
actor step per bar.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Adam, OptimizerConfig, Tensor
from .environment import AgentState, TradingEnv
from .networks import CNN, LSTM, PolicyNet, QNet

log = logging.getLogger(__name__)

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class ExplorationSchedule:
    epsilon: float = 1.0
    decay: float = 0.9
    floor: float = 0.01

    def __post_init__(self):
        if self.epsilon < 0 or self.floor < 0:
            raise ValueError("exploration rate and floor must be >= 0")
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError(f"exploration decay must lie in [0, 1], got {self.decay}")


def decay_exploration(sched: ExplorationSchedule) -> ExplorationSchedule:
    sched.epsilon = max(sched.decay * sched.epsilon, sched.floor)
    return sched


@dataclass(frozen=True)
class Transition:
    state: AgentState
    action: float
    reward: float

    def __post_init__(self):
        if not -1.0 <= self.action <= 1.0:
            raise ValueError(f"action must lie in [-1, 1], got {self.action}")


class ReplayMemory:
    """Bounded FIFO of transitions; the oldest entry is evicted first."""

    def __init__(self, capacity: int = 1000):
        if capacity < 1:
            raise ValueError("replay capacity must be positive")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def push(self, transition: Transition) -> None:
        self._items.append(transition)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Transition:
        return self._items[i]

    def __iter__(self):
        return iter(self._items)


def replay_indices(size: int, b: int, kind: str, rng: np.random.Generator) -> np.ndarray | None:
    if size < b:
        return None
    if kind == LSTM:
        start = int(rng.integers(0, size - b + 1))
        return np.arange(start, start + b)
    if kind == CNN:
        return np.sort(rng.choice(size, size=b, replace=False))
    raise ValueError(f"unknown sequential layer kind {kind!r}")


def replay_sample(memory: ReplayMemory, b: int, kind: str, rng: np.random.Generator) -> list[Transition] | None:
    """Mini-batch of ``b`` transitions, or ``None`` while the memory is too small."""
    idx = replay_indices(len(memory), b, kind, rng)
    return None if idx is None else [memory[int(i)] for i in idx]


# -- action selection ------------------------------------------------------------

def gaussian_log_prob(raw_a, mu, eps: float):
    """Log density of ``N(mu, eps^2)`` at ``raw_a``; ``mu`` may be a Tensor."""
    if eps <= 0:
        raise ValueError("log-probability is undefined for a zero exploration rate")
    return (raw_a - mu) ** 2 * (-0.5 / eps ** 2) - (math.log(eps) + LOG_SQRT_2PI)


@dataclass(frozen=True)
class LogProbContext:
    raw: float  # pre-clip sample
    mu: float
    eps: float


def sample_action_gaussian(policy: PolicyNet, state: AgentState, eps: float, rng: np.random.Generator,
                           mu: float | None = None) -> tuple[float, LogProbContext]:
    if eps < 0:
        raise ValueError("exploration rate must be >= 0")
    if mu is None:
        mu = policy.act(state)
    raw = mu if eps == 0 else float(rng.normal(mu, eps))
    return float(np.clip(raw, -1.0, 1.0)), LogProbContext(raw, mu, eps)


def ac_explore_action(policy: PolicyNet, state: AgentState, eps: float, rng: np.random.Generator,
                      mu: float | None = None) -> float:
    if eps < 0:
        raise ValueError("exploration rate must be >= 0")
    if mu is None:
        mu = policy.act(state)
    if eps == 0:
        return float(np.clip(mu, -1.0, 1.0))
    return float(np.clip(mu + eps * rng.uniform(-1.0, 1.0), -1.0, 1.0))


# -- updates -----------------------------------------------------------------------

@dataclass
class PGBatchBuffer:
    capacity: int = 128
    states: list = field(default_factory=list)
    contexts: list = field(default_factory=list)
    rewards: list = field(default_factory=list)

    def add(self, state: AgentState, ctx: LogProbContext, reward: float) -> None:
        self.states.append(state)
        self.contexts.append(ctx)
        self.rewards.append(float(reward))

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def full(self) -> bool:
        return len(self) >= self.capacity

    def clear(self) -> None:
        self.states.clear()
        self.contexts.clear()
        self.rewards.clear()


def _stack(states: Sequence[AgentState]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.window for s in states]), np.array([s.prev_action for s in states], dtype=float)


def pg_update(policy: PolicyNet, buffer: PGBatchBuffer, optimizer: Adam, mode: str = "train") -> bool:
    """One ascent step on ``sum r * log pi(raw | s)``; always clears the buffer."""
    if len(buffer) == 0:
        raise ValueError("pg_update needs a non-empty buffer")
    try:
        eps = np.array([c.eps for c in buffer.contexts])
        if np.any(eps <= 0):
            log.debug("skipping policy-gradient update with zero exploration")
            return False
        windows, prev = _stack(buffer.states)
        mu = policy.forward(windows, prev, mode)
        raw = np.array([c.raw for c in buffer.contexts])
        logp = (mu - raw) ** 2 * Tensor(-0.5 / eps ** 2) - Tensor(np.log(eps) + LOG_SQRT_2PI)
        objective = (logp * Tensor(np.array(buffer.rewards))).sum()
        optimizer.zero_grad()
        objective.backward()
        return optimizer.step(maximize=True)
    finally:
        buffer.clear()


def q_update(qnet: QNet, batch: Sequence[Transition], optimizer: Adam, mode: str = "train") -> float | None:
    """One descent step on the batch MSE between ``Q(s, a)`` and ``r``; returns the loss."""
    if not batch:
        raise ValueError("q_update needs a non-empty batch")
    windows, prev = _stack([t.state for t in batch])
    actions = np.array([t.action for t in batch])
    target = Tensor(np.array([t.reward for t in batch]))
    q = qnet.forward(windows, prev, actions, mode)
    loss = ((q - target) ** 2).mean()
    if not np.isfinite(loss.data):
        log.warning("critic loss is not finite; step rejected")
        optimizer.zero_grad()
        return None
    optimizer.zero_grad()
    loss.backward()
    return float(loss.data) if optimizer.step(maximize=False) else None


def policy_update_ddpg(policy: PolicyNet, critic, batch: Sequence[Transition], optimizer: Adam,
                       mode: str = "train") -> bool:
    """One ascent step on the batch mean of ``Q(s, mu(s))`` with the critic frozen.

    ``critic`` needs ``forward(windows, prev_actions, actions, mode)``;
    only the parameters registered with ``optimizer`` move.
    """
    if not batch:
        raise ValueError("policy_update_ddpg needs a non-empty batch")
    windows, prev = _stack([t.state for t in batch])
    mu = policy.forward(windows, prev, mode)
    q = critic.forward(windows, prev, mu, "eval")
    optimizer.zero_grad()
    q.mean().backward()
    ok = optimizer.step(maximize=True)
    if hasattr(critic, "zero_grad"):
        critic.zero_grad()
    return ok


# -- episodes ------------------------------------------------------------------------

@dataclass
class EpisodeLog:
    indices: list = field(default_factory=list)  # decision bar of each action
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)  # includes the liquidation reward last
    updates: int = 0
    rejected: int = 0

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))


def run_episode_pg(policy: PolicyNet, env: TradingEnv, sched: ExplorationSchedule, buffer: PGBatchBuffer,
                   optimizer: Adam | None, rng: np.random.Generator, eps: float | None = None,
                   decay: bool = True, update_mode: str = "train") -> EpisodeLog:
    """One pass over ``env``: sample, execute, store, flush every ``b`` steps and at the end.

    Between flushes the parameters are fixed, so the eval-mode features of
    the upcoming windows are computed in one batch; only the decision layer
    (which needs the previous action) runs per step.
    """
    eps = sched.epsilon if eps is None else eps
    learn = optimizer is not None and eps > 0
    episode = EpisodeLog()
    env.reset()
    buffer.clear()
    indices = list(env.decision_indices)
    pos = 0
    while pos < len(indices):
        seg = indices[pos: pos + (buffer.capacity - len(buffer) if learn else len(indices))]
        feats = policy.features(np.stack([env.window_at(t) for t in seg]), "eval").data
        for k, t in enumerate(seg):
            state = env.state
            mu = policy.mean_from_features(feats[k], state.prev_action)
            action, ctx = sample_action_gaussian(policy, state, eps, rng, mu=mu)
            reward, _ = env.step(action)
            episode.indices.append(t)
            episode.actions.append(action)
            episode.rewards.append(reward)
            if learn:
                buffer.add(state, ctx, reward)
        pos += len(seg)
        if learn and (buffer.full or pos >= len(indices)):
            if pg_update(policy, buffer, optimizer, update_mode):
                episode.updates += 1
            else:
                episode.rejected += 1
    episode.rewards.append(env.liquidate())
    if decay:
        decay_exploration(sched)
    return episode


def run_episode_ac(policy: PolicyNet, qnet: QNet, env: TradingEnv, memory: ReplayMemory,
                   sched: ExplorationSchedule, b: int, actor_opt: Adam | None, critic_opt: Adam | None,
                   rng: np.random.Generator, eps: float | None = None, decay: bool = True,
                   update_mode: str = "train") -> EpisodeLog:
    """One pass over ``env``: explore, execute, push, then one critic and one actor step."""
    eps = sched.epsilon if eps is None else eps
    learn = actor_opt is not None and critic_opt is not None
    episode = EpisodeLog()
    env.reset()
    for t in env.decision_indices:
        state = env.state
        action = ac_explore_action(policy, state, eps, rng)
        reward, _ = env.step(action)
        episode.indices.append(t)
        episode.actions.append(action)
        episode.rewards.append(reward)
        if not learn:
            continue
        memory.push(Transition(state, action, reward))
        batch = replay_sample(memory, b, qnet.kind, rng)
        if batch is None:
            continue
        ok_q = q_update(qnet, batch, critic_opt, update_mode) is not None
        ok_p = policy_update_ddpg(policy, qnet, batch, actor_opt, update_mode)
        episode.updates += int(ok_q) + int(ok_p)
        episode.rejected += int(not ok_q) + int(not ok_p)
    episode.rewards.append(env.liquidate())
    if decay:
        decay_exploration(sched)
    return episode


# -- agents ----------------------------------------------------------------------------

@dataclass(frozen=True)
class AgentConfig:
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    batch_size: int = 128
    replay_size: int = 1000
    explore_init: float = 1.0
    explore_decay: float = 0.9
    explore_min: float = 0.01
    weight_decay: float = 0.001
    clip_norm: float = 1.0
    dropout: float = 0.2
    update_mode: str = "train"

    def __post_init__(self):
        if self.batch_size < 1 or self.replay_size < 1:
            raise ValueError("batch and replay sizes must be positive")
        if self.replay_size < self.batch_size:
            raise ValueError("replay memory must hold at least one batch")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.update_mode not in ("train", "eval"):
            raise ValueError(f"update_mode must be 'train' or 'eval', got {self.update_mode!r}")


def agent_rngs(seq: np.random.SeedSequence) -> dict[str, np.random.Generator]:
    names = ("policy_init", "policy_dropout", "explore", "critic_init", "critic_dropout", "replay")
    return {name: np.random.default_rng(child) for name, child in zip(names, seq.spawn(len(names)))}


class Agent:
    """Shared plumbing: construction, snapshots and the public episode API."""

    algorithm = ""

    def __init__(self, kind: str, n_obs: int, cfg: AgentConfig, seed: np.random.SeedSequence | int):
        self.kind = kind
        self.n_obs = n_obs
        self.cfg = cfg
        seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self.rngs = agent_rngs(seq)
        self.sched = ExplorationSchedule(cfg.explore_init, cfg.explore_decay, cfg.explore_min)
        self.policy = PolicyNet(kind, n_obs, self.rngs["policy_init"], self.rngs["policy_dropout"], cfg.dropout)
        self.actor_opt = Adam(self.policy.parameters(), self._opt_cfg(cfg.actor_lr))

    def _opt_cfg(self, lr: float) -> OptimizerConfig:
        return OptimizerConfig(lr=lr, weight_decay=self.cfg.weight_decay, clip_norm=self.cfg.clip_norm)

    def networks(self) -> dict:
        return {"policy": self.policy}

    def snapshot(self) -> dict:
        return {name: net.snapshot() for name, net in self.networks().items()}

    def restore(self, snap: dict) -> None:
        for name, net in self.networks().items():
            net.restore(snap[name])

    def train_episode(self, env: TradingEnv) -> EpisodeLog:
        raise NotImplementedError

    def evaluate(self, env: TradingEnv) -> EpisodeLog:
        raise NotImplementedError

    def run_online(self, env: TradingEnv) -> EpisodeLog:
        raise NotImplementedError


class PGAgent(Agent):
    algorithm = "PG"

    def __init__(self, kind, n_obs, cfg: AgentConfig, seed):
        super().__init__(kind, n_obs, cfg, seed)
        self.buffer = PGBatchBuffer(cfg.batch_size)

    def train_episode(self, env):
        return run_episode_pg(self.policy, env, self.sched, self.buffer, self.actor_opt,
                              self.rngs["explore"], update_mode=self.cfg.update_mode)

    def evaluate(self, env):
        return run_episode_pg(self.policy, env, self.sched, self.buffer, None,
                              self.rngs["explore"], eps=0.0, decay=False)

    def run_online(self, env):
        # the score function needs a non-degenerate density, so refits sample at the floor rate
        return run_episode_pg(self.policy, env, self.sched, self.buffer, self.actor_opt,
                              self.rngs["explore"], eps=self.sched.floor, decay=False,
                              update_mode=self.cfg.update_mode)


class ACAgent(Agent):
    algorithm = "AC"

    def __init__(self, kind, n_obs, cfg: AgentConfig, seed):
        super().__init__(kind, n_obs, cfg, seed)
        self.qnet = QNet(kind, n_obs, self.rngs["critic_init"], self.rngs["critic_dropout"], cfg.dropout)
        self.critic_opt = Adam(self.qnet.parameters(), self._opt_cfg(cfg.critic_lr))
        self.memory = ReplayMemory(cfg.replay_size)

    def networks(self):
        return {"policy": self.policy, "qnet": self.qnet}

    def _run(self, env, learn: bool, eps=None, decay=True):
        return run_episode_ac(self.policy, self.qnet, env, self.memory, self.sched, self.cfg.batch_size,
                              self.actor_opt if learn else None, self.critic_opt if learn else None,
                              self.rngs["replay"], eps=eps, decay=decay, update_mode=self.cfg.update_mode)

    def train_episode(self, env):
        return self._run(env, learn=True)

    def evaluate(self, env):
        return self._run(env, learn=False, eps=0.0, decay=False)

    def run_online(self, env):
        return self._run(env, learn=True, eps=0.0, decay=False)


def make_agent(algorithm: str, kind: str, n_obs: int, cfg: AgentConfig, seed) -> Agent:
    if algorithm == "PG":
        return PGAgent(kind, n_obs, cfg, seed)
    if algorithm == "AC":
        return ACAgent(kind, n_obs, cfg, seed)
    raise ValueError(f"unknown algorithm {algorithm!r}; expected PG or AC")
