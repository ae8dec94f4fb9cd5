"""Physical world of one Monte Carlo trial.

Node placement, sparse channel occupancy, path-loss/Rayleigh gains and the
composite primary-signal matrix ``X = diag(occupancy) @ G.T``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import ConfigError, DegenerateGeometry, DimensionMismatch, PlacementFailure

PLACEMENT_RETRIES = 10_000

# Independent purposes a trial draws randomness for. Order matters: it fixes
# the spawn index of each child stream.
STREAM_PURPOSES = ("placement", "occupancy", "fading", "matrices", "noise", "links")


@dataclass(frozen=True)
class ScenarioConfig:
    n_channels: int = 200
    n_sus: int = 12
    n_pus: int = 4
    n_measurements: int = 50
    consensus_steps: int = 10
    link_prob: float = 0.8
    pathloss_exp: float = 2.0
    snr_db: float = 10.0
    threshold: Optional[float] = None  # None -> derived from geometry per trial
    area_side: float = 1000.0
    min_su_spacing: float = 10.0
    trials: int = 500
    rng_seed: int = 0

    def __post_init__(self):
        checks = [
            ("n_channels", self.n_channels >= 1, "must be >= 1"),
            ("n_pus", 0 < self.n_pus <= self.n_channels, "need 0 < P <= N"),
            ("n_measurements", 0 < self.n_measurements <= self.n_channels, "need 0 < T <= N"),
            ("n_sus", self.n_sus >= 1, "must be >= 1"),
            ("consensus_steps", self.consensus_steps >= 1, "must be >= 1"),
            ("link_prob", 0 < self.link_prob <= 1, "need 0 < p <= 1"),
            ("pathloss_exp", self.pathloss_exp > 0, "must be > 0"),
            ("area_side", self.area_side > 0, "must be > 0"),
            ("min_su_spacing", self.min_su_spacing >= 0, "must be >= 0"),
            ("trials", self.trials >= 1, "must be >= 1"),
            ("threshold", self.threshold is None or self.threshold > 0, "must be > 0"),
            ("rng_seed", 0 <= self.rng_seed < 2**64, "must fit in an unsigned 64-bit integer"),
        ]
        for name, ok, reason in checks:
            if not ok:
                raise ConfigError(name, f"{reason} (got {getattr(self, name)!r})")
        if self.n_measurements < self.n_pus * math.log(self.n_channels):
            warnings.warn(
                f"T={self.n_measurements} < P*ln(N)={self.n_pus * math.log(self.n_channels):.1f}; "
                "sparse recovery may be unreliable",
                stacklevel=3,
            )

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Scenario:
    pu_positions: np.ndarray  # (N, 2), one notional transmitter per channel
    su_positions: np.ndarray  # (M, 2)
    distances: np.ndarray  # (M, N)
    occupancy: np.ndarray  # (N,) in {0, 1}
    gains: np.ndarray  # (M, N)
    signals: np.ndarray  # (N, M)


def trial_streams(master_seed: int, trial: int) -> dict[str, np.random.Generator]:
    """Independent generators for every purpose of one trial.

    Streams depend only on ``(master_seed, trial)``, so sweep cells that share a
    trial index see identical placement, fading and link draws.
    """
    root = np.random.SeedSequence(entropy=master_seed, spawn_key=(trial,))
    children = root.spawn(len(STREAM_PURPOSES))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAM_PURPOSES, children)}


def place_nodes(cfg: ScenarioConfig, rng: np.random.Generator):
    """Uniform PU (one per channel) and SU positions in the square area.

    SUs are rejection-sampled so every pair is at least ``min_su_spacing`` apart.
    """
    side = cfg.area_side
    pu = rng.uniform(0.0, side, size=(cfg.n_channels, 2))
    su = np.empty((cfg.n_sus, 2))
    placed = 0
    budget = PLACEMENT_RETRIES
    min_d2 = cfg.min_su_spacing**2
    while placed < cfg.n_sus:
        if budget == 0:
            raise PlacementFailure(
                f"placed {placed}/{cfg.n_sus} SUs with spacing {cfg.min_su_spacing} "
                f"in a {side}x{side} area after {PLACEMENT_RETRIES} draws"
            )
        budget -= 1
        cand = rng.uniform(0.0, side, size=2)
        if placed and np.min(np.sum((su[:placed] - cand) ** 2, axis=1)) < min_d2:
            continue
        su[placed] = cand
        placed += 1
    return pu, su


def draw_occupancy(n_channels: int, n_pus: int, rng: np.random.Generator) -> np.ndarray:
    """Binary occupancy vector with a uniformly random support of size ``n_pus``."""
    if not 0 <= n_pus <= n_channels:
        raise ValueError(f"need 0 <= n_pus <= n_channels, got {n_pus} and {n_channels}")
    occ = np.zeros(n_channels, dtype=np.int8)
    occ[rng.choice(n_channels, size=n_pus, replace=False)] = 1
    return occ


def pairwise_distances(pu_positions, su_positions) -> np.ndarray:
    """SU-to-PU distance matrix, shape (M, N)."""
    diff = su_positions[:, None, :] - pu_positions[None, :, :]
    return np.sqrt(np.sum(diff**2, axis=-1))


def path_gain(distance, fading, alpha):
    return np.asarray(distance, dtype=float) ** (-alpha / 2.0) * np.abs(fading)


def channel_gains(pu_positions, su_positions, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Gain matrix ``G[i, j] = d_ij**(-alpha/2) * |h_ij|`` with unit-variance complex Gaussian h."""
    d = pairwise_distances(pu_positions, su_positions)
    if np.any(d == 0):
        i, j = np.argwhere(d == 0)[0]
        raise DegenerateGeometry(f"SU {i} is collocated with the PU of channel {j}")
    shape = d.shape
    h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    return path_gain(d, h, alpha)


def compose_signals(occupancy, gains) -> np.ndarray:
    occupancy = np.asarray(occupancy)
    gains = np.asarray(gains)
    if gains.ndim != 2 or occupancy.ndim != 1 or gains.shape[1] != occupancy.shape[0]:
        raise DimensionMismatch(
            f"occupancy of length {occupancy.shape} incompatible with gains of shape {gains.shape}"
        )
    return occupancy[:, None] * gains.T


def default_threshold(distances, alpha: float) -> float:
    """Detection threshold tied to the geometry's typical path-loss amplitude."""
    return 0.3 * float(np.median(np.asarray(distances) ** (-alpha / 2.0)))


def build_scenario(cfg: ScenarioConfig, streams: dict[str, np.random.Generator]) -> Scenario:
    pu, su = place_nodes(cfg, streams["placement"])
    occ = draw_occupancy(cfg.n_channels, cfg.n_pus, streams["occupancy"])
    g = channel_gains(pu, su, cfg.pathloss_exp, streams["fading"])
    return Scenario(
        pu_positions=pu,
        su_positions=su,
        distances=pairwise_distances(pu, su),
        occupancy=occ,
        gains=g,
        signals=compose_signals(occ, g),
    )
