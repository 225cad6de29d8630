"""Noisy enemy perception, normalization and observation stacking.

The observer never sees the enemy pose directly: the enemy's position and
heading are corrupted once per step with Gaussian noise, and every derived
quantity (range, both train angles) is computed from that single corrupted
pose so the components stay mutually consistent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import ContractError
from .sim import (AircraftState, Arena, KinematicsParams, compute_ata,
                  wrap_angle)

OBS_DIM = 7


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian sensor noise; ``var_xy`` and ``var_psi`` are variances."""

    mu: float = 0.0
    var_xy: float = 0.0
    var_psi: float = 0.0

    def __post_init__(self):
        if self.var_xy < 0 or self.var_psi < 0:
            raise ContractError("noise variances must be non-negative")

    @property
    def is_zero(self) -> bool:
        return self.mu == 0.0 and self.var_xy == 0.0 and self.var_psi == 0.0


class RawObservation(NamedTuple):
    r_hat: float
    ata_a_hat: float
    ata_e_hat: float
    psi_a: float
    psi_e_hat: float
    v_a: float
    v_e: float


def corrupt_enemy(enemy: AircraftState, nm: NoiseModel,
                  rng: np.random.Generator) -> AircraftState:
    """Return the enemy pose as one noisy sensor reading.

    Three fresh standard normals are drawn on every call (x, y, heading),
    even when a variance is zero, so the stream position does not depend on
    the noise level. The noisy position is deliberately not clamped to the
    arena.
    """
    nx, ny, npsi = rng.standard_normal(3)
    sd_xy = math.sqrt(nm.var_xy)
    return AircraftState(
        x=enemy.x + nm.mu + sd_xy * nx,
        y=enemy.y + nm.mu + sd_xy * ny,
        psi=wrap_angle(enemy.psi + nm.mu + math.sqrt(nm.var_psi) * npsi),
        v=enemy.v,
    )


def make_raw_observation(agent: AircraftState, noisy_enemy: AircraftState,
                         true_enemy_v: float) -> RawObservation:
    ex, ey = noisy_enemy.x, noisy_enemy.y
    return RawObservation(
        r_hat=math.hypot(agent.x - ex, agent.y - ey),
        ata_a_hat=compute_ata(agent.x, agent.y, ex, ey, agent.psi),
        ata_e_hat=compute_ata(ex, ey, agent.x, agent.y, noisy_enemy.psi),
        psi_a=agent.psi,
        psi_e_hat=noisy_enemy.psi,
        v_a=agent.v,
        v_e=true_enemy_v,
    )


def normalize(raw: RawObservation, arena: Arena,
              p: KinematicsParams) -> np.ndarray:
    """Map a raw observation onto [0, 1]^7."""
    span_v = p.v_max - p.v_min
    out = np.array([
        raw.r_hat / arena.diagonal,
        (raw.ata_a_hat + 180.0) / 360.0,
        (raw.ata_e_hat + 180.0) / 360.0,
        (raw.psi_a + 180.0) / 360.0,
        (raw.psi_e_hat + 180.0) / 360.0,
        (raw.v_a - p.v_min) / span_v,
        (raw.v_e - p.v_min) / span_v,
    ])
    return np.clip(out, 0.0, 1.0, out=out)


def observe(observer: AircraftState, other: AircraftState, nm: NoiseModel,
            rng: np.random.Generator, arena: Arena,
            p: KinematicsParams) -> tuple[np.ndarray, AircraftState]:
    """Full perception pipeline for one side; also returns the noisy pose."""
    noisy = corrupt_enemy(other, nm, rng)
    raw = make_raw_observation(observer, noisy, other.v)
    return normalize(raw, arena, p), noisy


class StackBuffer:
    """Ring of the ``n`` most recent observations, read newest first."""

    def __init__(self, n: int, obs_dim: int = OBS_DIM):
        if int(n) != n or n < 1:
            raise ContractError(f"stack count must be a positive integer, got {n!r}")
        self.n = int(n)
        self.obs_dim = obs_dim
        self._frames = None

    def reset(self, first) -> np.ndarray:
        first = self._check(first)
        self._frames = np.tile(first, (self.n, 1))
        return self.read()

    def push(self, obs) -> np.ndarray:
        if self._frames is None:
            raise ContractError("StackBuffer.push called before reset")
        obs = self._check(obs)
        self._frames[1:] = self._frames[:-1]
        self._frames[0] = obs
        return self.read()

    def read(self) -> np.ndarray:
        if self._frames is None:
            raise ContractError("StackBuffer.read called before reset")
        return self._frames.reshape(-1).copy()

    def _check(self, obs):
        obs = np.asarray(obs, dtype=float)
        if obs.shape != (self.obs_dim,):
            raise ContractError(
                f"expected observation of shape ({self.obs_dim},), got {obs.shape}")
        return obs
