"""Joint BS beamforming / RIS phase control as an episodic MDP.

An action is a vector in [-1, 1]^(2 N_t K + M). The first block is the
precoder (real/imag interleaved, one user column after another), rescaled
to spend exactly the power budget; the last M entries map affinely to RIS
phases. The reward is the per-step sum SE minus a constraint penalty,
which stays zero because decoding enforces both constraints.

Channels follow block fading: the scene geometry is fixed for the lifetime
of the environment (drawn from the scenario seed) and every step draws a
new small-scale realization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel import (TWO_PI, ChannelSet, Precoder, RisPhaseConfig,
                      ScenarioConfig, draw_channels, draw_geometry, sum_se)
from .nn_core import ConfigError, DimensionError, StateError


@dataclass
class EnvConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    steps_per_episode: int = 100
    state_mode: str = "raw"
    penalty_weight: float = 0.0

    def __post_init__(self):
        if self.steps_per_episode < 1:
            raise ConfigError("steps_per_episode must be >= 1")
        if self.state_mode not in ("embedded", "raw"):
            raise ConfigError(f"unknown state mode {self.state_mode!r}")
        if self.penalty_weight < 0:
            raise ConfigError("penalty weight must be non-negative")


@dataclass
class StepResult:
    reward: float
    next_state: np.ndarray
    done: bool
    info: dict


def action_dim(cfg: ScenarioConfig) -> int:
    return 2 * cfg.N_t * cfg.K + cfg.M


def decode_action(a, cfg: ScenarioConfig):
    """Map a raw action to a full-power precoder and RIS phases.

    Entries are clamped to [-1, 1] first. An all-zero precoder block falls
    back to the equal-gain precoder with every entry ``sqrt(p_max/(N_t K))``.
    """
    a = np.clip(np.asarray(a, dtype=np.float64), -1.0, 1.0)
    n = 2 * cfg.N_t * cfg.K
    if a.shape != (n + cfg.M,):
        raise DimensionError(
            f"action must have length {n + cfg.M}, got {a.shape}")
    p_max = cfg.p_max
    pairs = a[:n].reshape(cfg.K, cfg.N_t, 2)
    F = (pairs[..., 0] + 1j * pairs[..., 1]).T
    power = float(np.sum(np.abs(F) ** 2))
    if power == 0.0:
        F = np.full((cfg.N_t, cfg.K), np.sqrt(p_max / (cfg.N_t * cfg.K)),
                    dtype=np.complex128)
    else:
        F = F * np.sqrt(p_max / power)
    phases = (a[n:] + 1.0) * np.pi
    phases[phases >= TWO_PI] = 0.0
    return Precoder(F, p_max), RisPhaseConfig(phases)


def encode_precoder(F, cfg: ScenarioConfig) -> np.ndarray:
    """Inverse layout of :func:`decode_action` for the precoder block
    (no clamping or scaling)."""
    F = np.asarray(F, dtype=np.complex128)
    return np.stack([F.T.real, F.T.imag], axis=-1).ravel()


def constraint_violation(prec: Precoder, phi: RisPhaseConfig) -> float:
    """Amount by which the power and unit-modulus constraints are broken.

    Deviations at rounding level (relative 1e-9 on power, 1e-12 on each
    modulus) count as zero so that decoded actions are never penalized.
    """
    over = prec.power - prec.p_max
    over = over if over > 1e-9 * prec.p_max else 0.0
    dev = np.abs(np.abs(phi.theta) - 1.0)
    modulus = float(np.sum(dev[dev > 1e-12]))
    return over + modulus


def normalize_state(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if not np.any(v):
        return v.copy()
    rms = np.sqrt(np.mean(v * v))
    return v / max(rms, 1e-12)


class RisEnv:
    """Episodic RIS environment.

    Parameters
    ----------
    cfg : EnvConfig
    embedder : ChannelEmbedder, optional
        Required when ``cfg.state_mode == "embedded"``.
    """

    def __init__(self, cfg: EnvConfig, embedder=None):
        if cfg.state_mode == "embedded" and embedder is None:
            raise ConfigError("embedded state mode needs an embedder")
        self.cfg = cfg
        self.scenario = cfg.scenario
        self.embedder = embedder
        self.geometry = draw_geometry(
            cfg.scenario, np.random.default_rng(cfg.scenario.seed))
        self.noise_power = cfg.scenario.noise_power
        self.rng = np.random.default_rng(cfg.scenario.seed + 1)
        self.channels: Optional[ChannelSet] = None
        self.t = 0
        self.done = True

    @property
    def action_dim(self) -> int:
        return action_dim(self.scenario)

    @property
    def state_dim(self) -> int:
        s = self.scenario
        if self.cfg.state_mode == "embedded":
            return (2 * s.K + 1) * self.embedder.dim
        return 2 * (s.K * s.N_r * s.N_t + s.M * s.N_t + s.K * s.N_r * s.M)

    def observe(self, ch: ChannelSet) -> np.ndarray:
        if self.cfg.state_mode == "embedded":
            return normalize_state(self.embedder.embed_state(ch))
        from .baselines import raw_state
        return raw_state(ch)

    def draw(self) -> ChannelSet:
        return draw_channels(self.scenario, self.geometry, self.rng)

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.channels = self.draw()
        self.t = 0
        self.done = False
        return self.observe(self.channels)

    def evaluate(self, a, ch: Optional[ChannelSet] = None):
        """Reward terms of action ``a`` on ``ch`` (current channels by
        default) without advancing time."""
        ch = self.channels if ch is None else ch
        prec, phi = decode_action(a, self.scenario)
        se = sum_se(ch, phi, prec, self.noise_power)
        violation = constraint_violation(prec, phi)
        penalty = self.cfg.penalty_weight * violation
        return se, penalty, violation > 0.0

    def step(self, a) -> StepResult:
        if self.done or self.channels is None:
            raise StateError("step called on a finished or unreset episode")
        se, penalty, violated = self.evaluate(a)
        self.t += 1
        self.done = self.t >= self.cfg.steps_per_episode
        self.channels = self.draw()
        return StepResult(se - penalty, self.observe(self.channels), self.done,
                          {"sum_se": se, "penalty": penalty,
                           "constraint_violated": violated})
