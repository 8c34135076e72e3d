"""RIS-assisted multi-user downlink: channels, effective channel, SINR, SE.

Shapes follow the usual convention: the direct channel of user ``k`` is
``N_r x N_t``, the BS-to-RIS channel ``M x N_t`` and the RIS-to-user channel
``N_r x M``. A :class:`ChannelSet` stores the per-user matrices stacked
along a leading user axis. Powers are linear milliwatts everywhere; dBm
appears only in :class:`ScenarioConfig`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .nn_core import ConfigError, DimensionError

TWO_PI = 2.0 * np.pi


def dbm_to_mw(x: float) -> float:
    return 10.0 ** (x / 10.0)


def db_to_amplitude(x_db: float) -> float:
    return 10.0 ** (-x_db / 20.0)


@dataclass
class ScenarioConfig:
    """Physical scenario.

    ``channel_model`` is ``"rayleigh"`` (i.i.d. CN(0, 1) entries) or
    ``"geometric"`` (``paths`` ULA paths plus an optional LoS term weighted
    by ``rician_k_db``; ``-inf`` disables it, ``+inf`` keeps only LoS).
    The ``pl_*_db`` values are large-scale attenuations applied as an
    amplitude factor to every entry of the respective link.
    """

    N_t: int = 32
    N_r: int = 1
    M: int = 32
    K: int = 10
    p_max_dbm: float = 35.0
    noise_dbm: float = -90.0
    channel_model: str = "geometric"
    paths: int = 5
    rician_k_db: float = -math.inf
    pl_direct_db: float = 115.0
    pl_bs_ris_db: float = 55.0
    pl_ris_user_db: float = 55.0
    seed: int = 0

    def __post_init__(self):
        for name in ("N_t", "N_r", "M", "K"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.channel_model not in ("rayleigh", "geometric"):
            raise ConfigError(
                f"unknown channel model {self.channel_model!r}")
        if self.channel_model == "geometric" and self.paths < 1:
            raise ConfigError("geometric channel model needs paths >= 1")
        if math.isnan(self.p_max_dbm) or math.isnan(self.noise_dbm):
            raise ConfigError("powers must be real numbers")

    @property
    def p_max(self) -> float:
        return dbm_to_mw(self.p_max_dbm)

    @property
    def noise_power(self) -> float:
        return dbm_to_mw(self.noise_dbm)


@dataclass
class ChannelSet:
    """All channels of one scene realization.

    Attributes
    ----------
    direct : complex ndarray, shape (K, N_r, N_t)
    bs_ris : complex ndarray, shape (M, N_t)
    ris_user : complex ndarray, shape (K, N_r, M)
    """

    direct: np.ndarray
    bs_ris: np.ndarray
    ris_user: np.ndarray

    def __post_init__(self):
        self.direct = np.asarray(self.direct, dtype=np.complex128)
        self.bs_ris = np.asarray(self.bs_ris, dtype=np.complex128)
        self.ris_user = np.asarray(self.ris_user, dtype=np.complex128)
        if self.direct.ndim != 3 or self.ris_user.ndim != 3 or \
                self.bs_ris.ndim != 2:
            raise DimensionError("ChannelSet arrays have the wrong rank")
        K, N_r, N_t = self.direct.shape
        M = self.bs_ris.shape[0]
        if K < 1:
            raise DimensionError("ChannelSet needs at least one user")
        if self.bs_ris.shape != (M, N_t) or self.ris_user.shape != (K, N_r, M):
            raise DimensionError(
                "inconsistent N_t / N_r / M across ChannelSet members")

    @property
    def K(self) -> int:
        return self.direct.shape[0]

    @property
    def N_r(self) -> int:
        return self.direct.shape[1]

    @property
    def N_t(self) -> int:
        return self.direct.shape[2]

    @property
    def M(self) -> int:
        return self.bs_ris.shape[0]

    def matrices(self):
        """The 2K+1 matrices in canonical order: direct users ascending,
        BS-RIS, RIS-user users ascending."""
        return [*self.direct, self.bs_ris, *self.ris_user]

    def flatten(self) -> np.ndarray:
        """Real vector: for each matrix in :meth:`matrices` order, its real
        part then its imaginary part, both row-major."""
        parts = []
        for H in self.matrices():
            parts.append(H.real.ravel())
            parts.append(H.imag.ravel())
        return np.concatenate(parts)

    def permute_users(self, order) -> "ChannelSet":
        order = list(order)
        return ChannelSet(self.direct[order], self.bs_ris.copy(),
                          self.ris_user[order])

    def equals(self, other: "ChannelSet") -> bool:
        """Bitwise equality."""
        return all(a.shape == b.shape and a.tobytes() == b.tobytes()
                   for a, b in ((self.direct, other.direct),
                                (self.bs_ris, other.bs_ris),
                                (self.ris_user, other.ris_user)))


@dataclass
class RisPhaseConfig:
    """RIS phase angles in radians, wrapped into [0, 2pi)."""

    phases: np.ndarray

    def __post_init__(self):
        self.phases = np.mod(np.asarray(self.phases, dtype=np.float64), TWO_PI)
        # mod can round up to exactly 2pi for tiny negative inputs
        self.phases[self.phases >= TWO_PI] = 0.0

    @property
    def M(self) -> int:
        return self.phases.size

    @property
    def theta(self) -> np.ndarray:
        return np.exp(1j * self.phases)


@dataclass
class Precoder:
    """Beamforming matrix ``F`` (N_t x K) with its power budget in mW."""

    F: np.ndarray
    p_max: float

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=np.complex128)
        if self.F.ndim != 2:
            raise DimensionError("precoder must be an N_t x K matrix")
        if self.power > self.p_max + 1e-9 * max(1.0, self.p_max):
            raise ValueError(
                f"precoder power {self.power} exceeds budget {self.p_max}")

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.F) ** 2))


def _as_matrix(F) -> np.ndarray:
    return F.F if isinstance(F, Precoder) else np.asarray(F, np.complex128)


def _as_theta(phi) -> np.ndarray:
    if isinstance(phi, RisPhaseConfig):
        return phi.theta
    return np.exp(1j * np.asarray(phi, dtype=np.float64))


# -- channel generation -----------------------------------------------------

def ula_steering(n: int, angle) -> np.ndarray:
    """Unit-norm half-wavelength ULA response; one column per angle."""
    angle = np.atleast_1d(np.asarray(angle, dtype=np.float64))
    k = np.arange(n)[:, None]
    return np.exp(1j * np.pi * k * np.sin(angle)[None, :]) / np.sqrt(n)


@dataclass
class LinkGeometry:
    """Fixed large-scale structure of one link: path and LoS angles."""

    aod: np.ndarray
    aoa: np.ndarray
    los_aod: float
    los_aoa: float


@dataclass
class Geometry:
    direct: list
    bs_ris: LinkGeometry
    ris_user: list


def _draw_link(rng, paths):
    return LinkGeometry(aod=rng.uniform(-np.pi / 2, np.pi / 2, paths),
                        aoa=rng.uniform(-np.pi / 2, np.pi / 2, paths),
                        los_aod=float(rng.uniform(-np.pi / 2, np.pi / 2)),
                        los_aoa=float(rng.uniform(-np.pi / 2, np.pi / 2)))


def draw_geometry(cfg: ScenarioConfig,
                  rng: np.random.Generator) -> Optional[Geometry]:
    """Draw the fixed scene geometry; ``None`` for Rayleigh fading."""
    if cfg.channel_model == "rayleigh":
        return None
    if cfg.paths < 1:
        raise ConfigError("geometric channel model needs paths >= 1")
    return Geometry(direct=[_draw_link(rng, cfg.paths) for _ in range(cfg.K)],
                    bs_ris=_draw_link(rng, cfg.paths),
                    ris_user=[_draw_link(rng, cfg.paths)
                              for _ in range(cfg.K)])


def _cn(rng, shape, var=1.0):
    s = np.sqrt(var / 2.0)
    return s * rng.standard_normal(shape) + 1j * s * rng.standard_normal(shape)


def _geometric_link(rng, link: LinkGeometry, n_rx, n_tx, k_db):
    kappa = 10.0 ** (k_db / 10.0) if np.isfinite(k_db) else (
        math.inf if k_db > 0 else 0.0)
    paths = link.aod.size
    H = np.zeros((n_rx, n_tx), dtype=np.complex128)
    if kappa != math.inf:
        alpha = _cn(rng, paths, 1.0 / paths)
        A_rx = ula_steering(n_rx, link.aoa)
        A_tx = ula_steering(n_tx, link.aod)
        w_nlos = 1.0 if kappa == 0.0 else np.sqrt(1.0 / (kappa + 1.0))
        H += w_nlos * (A_rx * alpha) @ A_tx.conj().T
    if kappa > 0.0:
        w_los = 1.0 if kappa == math.inf else np.sqrt(kappa / (kappa + 1.0))
        H += w_los * (ula_steering(n_rx, link.los_aoa)
                      @ ula_steering(n_tx, link.los_aod).conj().T)
    return H


def draw_channels(cfg: ScenarioConfig, geometry: Optional[Geometry],
                  rng: np.random.Generator) -> ChannelSet:
    """One small-scale realization on top of a fixed ``geometry``."""
    K, N_t, N_r, M = cfg.K, cfg.N_t, cfg.N_r, cfg.M
    if cfg.channel_model == "rayleigh":
        direct = _cn(rng, (K, N_r, N_t))
        bs_ris = _cn(rng, (M, N_t))
        ris_user = _cn(rng, (K, N_r, M))
    else:
        if geometry is None:
            raise ConfigError("geometric channels need a geometry")
        k_db = cfg.rician_k_db
        direct = np.stack([_geometric_link(rng, g, N_r, N_t, k_db)
                           for g in geometry.direct])
        bs_ris = _geometric_link(rng, geometry.bs_ris, M, N_t, k_db)
        ris_user = np.stack([_geometric_link(rng, g, N_r, M, k_db)
                             for g in geometry.ris_user])
    return ChannelSet(direct * db_to_amplitude(cfg.pl_direct_db),
                      bs_ris * db_to_amplitude(cfg.pl_bs_ris_db),
                      ris_user * db_to_amplitude(cfg.pl_ris_user_db))


def generate_channels(cfg: ScenarioConfig,
                      seed: Optional[int] = None) -> ChannelSet:
    """Fresh geometry and fading from ``seed`` (``cfg.seed`` if omitted)."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    geometry = draw_geometry(cfg, rng)
    return draw_channels(cfg, geometry, rng)


def generate_dataset(cfg: ScenarioConfig, n: int, seed: Optional[int] = None):
    """``n`` block-fading realizations of one scene (shared geometry)."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    geometry = draw_geometry(cfg, rng)
    return [draw_channels(cfg, geometry, rng) for _ in range(n)]


# -- signal model -----------------------------------------------------------

def effective_channel(ch: ChannelSet, k: int, phi) -> np.ndarray:
    """``H_k + G_k diag(theta) H_BR`` for user ``k`` (N_r x N_t)."""
    if not 0 <= k < ch.K:
        raise IndexError(f"user index {k} out of range for K={ch.K}")
    theta = _as_theta(phi)
    if theta.size != ch.M:
        raise DimensionError(f"expected {ch.M} RIS phases, got {theta.size}")
    return ch.direct[k] + (ch.ris_user[k] * theta) @ ch.bs_ris


def effective_channels(ch: ChannelSet, phi) -> np.ndarray:
    """All users at once, shape (K, N_r, N_t)."""
    theta = _as_theta(phi)
    if theta.size != ch.M:
        raise DimensionError(f"expected {ch.M} RIS phases, got {theta.size}")
    return ch.direct + (ch.ris_user * theta) @ ch.bs_ris


def _gain_matrix(H_eff, F):
    # gains[k, u] = ||H_eff,k f_u||^2
    if F.shape[0] != H_eff.shape[2]:
        raise DimensionError(
            f"precoder has {F.shape[0]} rows, channel has N_t={H_eff.shape[2]}")
    return np.sum(np.abs(H_eff @ F) ** 2, axis=1)


def sinr_user(ch: ChannelSet, k: int, phi, F, noise_power: float) -> float:
    if noise_power <= 0:
        raise ValueError("noise power must be positive")
    F = _as_matrix(F)
    if F.shape[1] != ch.K:
        raise DimensionError(f"precoder has {F.shape[1]} columns, K={ch.K}")
    H = effective_channel(ch, k, phi)
    gains = np.sum(np.abs(H @ F) ** 2, axis=0)
    interference = gains.sum() - gains[k]
    return float(gains[k] / (interference + noise_power))


def sinr_all(ch: ChannelSet, phi, F, noise_power: float) -> np.ndarray:
    """Vector of per-user SINRs."""
    if noise_power <= 0:
        raise ValueError("noise power must be positive")
    F = _as_matrix(F)
    if F.shape[1] != ch.K:
        raise DimensionError(f"precoder has {F.shape[1]} columns, K={ch.K}")
    G = _gain_matrix(effective_channels(ch, phi), F)
    signal = np.diag(G)
    return signal / (G.sum(axis=1) - signal + noise_power)


def se_user(sinr: float) -> float:
    if sinr < 0:
        raise ValueError(f"SINR must be non-negative, got {sinr}")
    return float(np.log2(1.0 + sinr))


def sum_se(ch: ChannelSet, phi, F, noise_power: float) -> float:
    """Sum over users of ``log2(1 + SINR_k)`` in bps/Hz."""
    s = sinr_all(ch, phi, F, noise_power)
    return float(np.sum(np.log2(1.0 + s)))
