"""DDPG agent: actor/critic MLPs, target networks, replay buffer, training.

Networks are :class:`~rislab.nn_core.MLP` instances; gradients are
computed by hand and applied with Adam.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .nn_core import (MLP, ConfigError, DimensionError, NumericError,
                      OptimState, optimizer_step)

log = logging.getLogger(__name__)


@dataclass
class AgentConfig:
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    gamma: float = 0.99
    batch: int = 64
    tau: float = 0.005
    hidden: Tuple[int, ...] = (64, 64)
    buffer_capacity: int = 100_000
    noise_std: float = 0.1
    episodes: int = 2000
    steps_per_episode: int = 100
    optimizer: str = "adam"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0 < self.tau <= 1:
            raise ConfigError("tau must lie in (0, 1]")
        if not 0 <= self.gamma <= 1:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.batch < 1 or self.buffer_capacity < 1:
            raise ConfigError("batch and buffer capacity must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if self.optimizer not in ("adam", "adamw"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO ring buffer with uniform sampling."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, state_dim))
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, t: Transition) -> None:
        i = self.cursor
        self.s[i] = t.s
        self.a[i] = t.a
        self.r[i] = t.r
        self.s_next[i] = t.s_next
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ready(self, batch: int) -> bool:
        return self.size >= batch

    def sample_indices(self, batch: int, rng) -> Optional[np.ndarray]:
        """Uniform indices with replacement, or ``None`` if underfilled."""
        if not self.ready(batch):
            return None
        return rng.integers(0, self.size, size=batch)

    def sample(self, batch: int, rng) -> Optional[Batch]:
        idx = self.sample_indices(batch, rng)
        if idx is None:
            return None
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx])

    def transitions(self) -> List[Transition]:
        """Stored transitions, oldest first."""
        start = self.cursor if self.size == self.capacity else 0
        order = [(start + i) % self.capacity for i in range(self.size)]
        return [Transition(self.s[i].copy(), self.a[i].copy(),
                           float(self.r[i]), self.s_next[i].copy())
                for i in order]


def soft_update(target: MLP, online: MLP, tau: float) -> MLP:
    tp, op = target.params(), online.params()
    for name, arr in tp.items():
        src = op[name]
        if src.shape != arr.shape:
            raise DimensionError(f"soft update shape mismatch for {name!r}")
        arr *= 1.0 - tau
        arr += tau * src
    return target


class DDPGAgent:
    def __init__(self, state_dim: int, action_dim: int,
                 cfg: Optional[AgentConfig] = None, seed: int = 0):
        self.cfg = AgentConfig() if cfg is None else cfg
        self.state_dim, self.action_dim = state_dim, action_dim
        self.rng = np.random.default_rng(seed)
        h = list(self.cfg.hidden)
        self.actor = MLP([state_dim, *h, action_dim], "tanh", self.rng)
        self.critic = MLP([state_dim + action_dim, *h, 1], "identity",
                          self.rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        kind = self.cfg.optimizer
        self.actor_opt = OptimState(kind, self.cfg.actor_lr)
        self.critic_opt = OptimState(kind, self.cfg.critic_lr)
        self.buffer = ReplayBuffer(self.cfg.buffer_capacity, state_dim,
                                   action_dim)

    # networks

    def actor_forward(self, s) -> np.ndarray:
        return self.actor.forward(s)

    def critic_forward(self, s, a) -> np.ndarray:
        return critic_value(self.critic, s, a)

    def select_action(self, s, noise_std: Optional[float] = None,
                      rng=None) -> np.ndarray:
        noise_std = self.cfg.noise_std if noise_std is None else noise_std
        rng = self.rng if rng is None else rng
        a = self.actor.forward(s)
        if noise_std > 0:
            a = a + noise_std * rng.standard_normal(a.shape)
        return np.clip(a, -1.0, 1.0)

    # updates

    def td_targets(self, batch: Batch) -> np.ndarray:
        a_next = self.actor_target.forward(batch.s_next)
        q_next = critic_value(self.critic_target, batch.s_next, a_next)
        return batch.r + self.cfg.gamma * q_next

    def critic_update(self, batch: Batch) -> float:
        y = self.td_targets(batch)
        q = critic_value(self.critic, batch.s, batch.a)
        err = q - y
        loss = float(np.mean(err * err))
        if not np.isfinite(loss):
            raise NumericError("critic loss became non-finite")
        self.critic.backward((2.0 / len(y)) * err[:, None])
        optimizer_step(self.critic.params(), self.critic.grads(),
                       self.critic_opt)
        return loss

    def actor_gradients(self, batch: Batch) -> float:
        """Gradients of ``-mean Q(s, actor(s))`` stored on the actor.

        The critic is only differentiated w.r.t. its input; its parameters
        and optimizer state are left untouched.
        """
        a = self.actor.forward(batch.s)
        x = np.concatenate([batch.s, a], axis=1)
        q = self.critic.forward(x)[:, 0]
        n = len(q)
        dx = self.critic.backward(np.full((n, 1), -1.0 / n))
        self.actor.backward(dx[:, self.state_dim:])
        return float(np.mean(q))

    def actor_update(self, batch: Batch) -> float:
        objective = self.actor_gradients(batch)
        if not np.isfinite(objective):
            raise NumericError("actor objective became non-finite")
        optimizer_step(self.actor.params(), self.actor.grads(), self.actor_opt)
        return objective

    def update_targets(self) -> None:
        soft_update(self.actor_target, self.actor, self.cfg.tau)
        soft_update(self.critic_target, self.critic, self.cfg.tau)

    def learn(self) -> Optional[float]:
        """One sample/critic/actor/target cycle; ``None`` if not ready."""
        batch = self.buffer.sample(self.cfg.batch, self.rng)
        if batch is None:
            return None
        loss = self.critic_update(batch)
        self.actor_update(batch)
        self.update_targets()
        return loss

    def params(self):
        out = {}
        for prefix, net in (("actor", self.actor), ("critic", self.critic),
                            ("actor_target", self.actor_target),
                            ("critic_target", self.critic_target)):
            out.update({f"{prefix}.{k}": v for k, v in net.params().items()})
        return out


def critic_value(critic: MLP, s, a) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if s.ndim == 1:
        return critic.forward(np.concatenate([s, a]))[0]
    return critic.forward(np.concatenate([s, a], axis=1))[:, 0]


@dataclass
class TrainResult:
    agent: DDPGAgent
    rewards: List[float] = field(default_factory=list)
    critic_losses: List[float] = field(default_factory=list)
    diverged: bool = False


def train(env, cfg: Optional[AgentConfig] = None, seed: int = 0,
          agent: Optional[DDPGAgent] = None, log_every: int = 0) -> TrainResult:
    """Run DDPG on ``env`` for ``cfg.episodes`` episodes.

    ``rewards[i]`` is the mean per-step reward of episode ``i`` and
    ``critic_losses[i]`` the mean critic loss over its updates (NaN when
    the buffer was not yet ready). A non-finite loss stops training early
    with ``diverged`` set and the traces kept up to that point.
    """
    cfg = AgentConfig() if cfg is None else cfg
    if agent is None:
        agent = DDPGAgent(env.state_dim, env.action_dim, cfg, seed)
    if (agent.state_dim, agent.action_dim) != (env.state_dim, env.action_dim):
        raise DimensionError("agent and environment dimensions differ")
    env.cfg.steps_per_episode = cfg.steps_per_episode
    result = TrainResult(agent)
    episode_rng = np.random.default_rng(seed)
    for ep in range(cfg.episodes):
        s = env.reset(int(episode_rng.integers(2 ** 63)))
        rewards, losses = [], []
        try:
            while True:
                a = agent.select_action(s)
                step = env.step(a)
                agent.buffer.push(Transition(s, a, step.reward,
                                             step.next_state))
                loss = agent.learn()
                if loss is not None:
                    losses.append(loss)
                rewards.append(step.reward)
                s = step.next_state
                if step.done:
                    break
        except NumericError as exc:
            log.warning("training diverged in episode %d: %s", ep, exc)
            result.diverged = True
            break
        result.rewards.append(float(np.mean(rewards)))
        result.critic_losses.append(
            float(np.mean(losses)) if losses else float("nan"))
        if log_every and (ep + 1) % log_every == 0:
            log.info("episode %d mean reward %.4f", ep + 1,
                     result.rewards[-1])
    return result


def cumulative_average(rewards) -> np.ndarray:
    """Running average of episode rewards (the training-curve form)."""
    r = np.asarray(rewards, dtype=np.float64)
    return np.cumsum(r) / np.arange(1, r.size + 1) if r.size else r


def write_trace(path, result: TrainResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "mean_reward", "critic_loss"])
        for i, (r, c) in enumerate(zip(result.rewards, result.critic_losses)):
            w.writerow([i, repr(r), repr(c)])


def write_curve(path, rewards) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "avg_cumulative_reward"])
        for i, v in enumerate(cumulative_average(rewards)):
            w.writerow([i, repr(float(v))])


def random_policy_reward(env, episodes: int, seed: int = 0) -> float:
    """Mean per-step reward of uniformly random actions on ``env``."""
    rng = np.random.default_rng(seed)
    episode_rng = np.random.default_rng(seed + 1)
    total, n = 0.0, 0
    for _ in range(episodes):
        env.reset(int(episode_rng.integers(2 ** 63)))
        done = False
        while not done:
            step = env.step(rng.uniform(-1.0, 1.0, env.action_dim))
            total += step.reward
            n += 1
            done = step.done
    return total / n


def evaluate_policy(agent: DDPGAgent, env, channel_sets) -> float:
    """Mean sum SE of the noiseless actor over ``channel_sets``."""
    values = []
    for ch in channel_sets:
        a = agent.select_action(env.observe(ch), noise_std=0.0)
        se, _, _ = env.evaluate(a, ch)
        values.append(se)
    return float(np.mean(values))
