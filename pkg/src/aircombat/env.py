"""Two-aircraft partially observable engagement.

Both sides act simultaneously. Each side sees the other through its own
independent noise stream and keeps its own observation stack, so the
environment is symmetric and either side can be driven by a learner.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple

import numpy as np

from .exceptions import ContractError
from .observation import OBS_DIM, NoiseModel, StackBuffer, observe
from .reward import Outcome, RewardParams, classify_outcome, compute_reward
from .sim import (AircraftState, Arena, KinematicsParams, action_from_index,
                  compute_geometry, step_aircraft)


class Status(enum.Enum):
    RUNNING = "running"
    AGENT_WIN = "agent_win"
    ENEMY_WIN = "enemy_win"
    CRASH = "crash"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class EnvConfig:
    arena: Arena = field(default_factory=Arena)
    kinematics: KinematicsParams = field(default_factory=KinematicsParams)
    reward: RewardParams = field(default_factory=RewardParams)
    noise: NoiseModel = field(default_factory=NoiseModel)
    stack_n: int = 1
    episode_length: int = 200
    terminate_on_advantage: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        if self.episode_length < 1:
            raise ContractError("episode_length must be >= 1")
        if int(self.stack_n) != self.stack_n or self.stack_n < 1:
            raise ContractError("stack_n must be a positive integer")

    @property
    def obs_size(self) -> int:
        return OBS_DIM * self.stack_n


class StepResult(NamedTuple):
    obs_agent: np.ndarray
    obs_enemy: np.ndarray
    reward_agent: float
    reward_enemy: float
    done: bool
    status: Status

    @property
    def terminated(self) -> bool:
        """True for a real terminal state; a timeout is a truncation."""
        return self.status in (Status.CRASH, Status.AGENT_WIN, Status.ENEMY_WIN)


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool


def episode_score(transitions: Iterable) -> float:
    """Undiscounted sum of agent rewards; accepts Transitions or plain numbers."""
    total = 0.0
    for t in transitions:
        total += t.r if isinstance(t, Transition) else float(t)
    return total


TRACE_HEADER = (
    ["step", "status",
     "agent_x", "agent_y", "agent_psi", "agent_v",
     "enemy_x", "enemy_y", "enemy_psi", "enemy_v",
     "agent_sees_x", "agent_sees_y", "agent_sees_psi",
     "enemy_sees_x", "enemy_sees_y", "enemy_sees_psi"]
    + [f"obs_agent_{i}" for i in range(OBS_DIM)]
    + [f"obs_enemy_{i}" for i in range(OBS_DIM)]
    + ["action_agent", "action_enemy", "reward_agent", "reward_enemy"]
)


class AirCombatEnv:
    """Episode loop around the kinematics, perception and reward layers.

    ``reset(seed=...)`` reseeds every random stream, which is how tournaments
    make each episode independently reproducible. Without a seed, streams
    continue from where the previous episode stopped.
    """

    def __init__(self, config: EnvConfig = EnvConfig(), record: bool = False):
        self.config = config
        self.record = record
        self.trace: list[list] = []
        self._seed_rngs(config.rng_seed)
        self._stack_agent = StackBuffer(config.stack_n)
        self._stack_enemy = StackBuffer(config.stack_n)
        self.agent: AircraftState | None = None
        self.enemy: AircraftState | None = None
        self.steps = 0
        self.done = True
        self.status = Status.RUNNING

    @property
    def obs_size(self) -> int:
        return self.config.obs_size

    def _seed_rngs(self, seed, swap_sides=False):
        place, noise_1, noise_2 = np.random.SeedSequence(seed).spawn(3)
        if swap_sides:
            noise_1, noise_2 = noise_2, noise_1
        self._rng_place = np.random.default_rng(place)
        self._rng_noise_agent = np.random.default_rng(noise_1)
        self._rng_noise_enemy = np.random.default_rng(noise_2)

    def _random_pose(self) -> AircraftState:
        a = self.config.arena
        x, y, psi = self._rng_place.uniform(
            (a.x_min, a.y_min, -180.0), (a.x_max, a.y_max, 180.0))
        return AircraftState(float(x), float(y), float(psi),
                             self.config.kinematics.v_min)

    def reset(self, seed=None, initial_states=None, swap_sides=False):
        """Start an episode; returns ``(obs_agent, obs_enemy)``.

        With ``swap_sides`` the seeded episode is mirrored: the agent gets the
        pose and noise stream the enemy would have had, and vice versa.
        """
        if seed is not None:
            self._seed_rngs(seed, swap_sides)
        if initial_states is not None:
            self.agent, self.enemy = initial_states
        else:
            min_sep = self.config.reward.crash_max
            while True:
                agent, enemy = self._random_pose(), self._random_pose()
                if math.hypot(agent.x - enemy.x, agent.y - enemy.y) >= min_sep:
                    break
            if swap_sides:
                agent, enemy = enemy, agent
            self.agent, self.enemy = agent, enemy
        self.steps = 0
        self.done = False
        self.status = Status.RUNNING
        self.trace = []
        obs_a, obs_e = self._perceive()
        if self.record:
            self._record(obs_a, obs_e, -1, -1, 0.0, 0.0)
        return (self._stack_agent.reset(obs_a), self._stack_enemy.reset(obs_e))

    def _perceive(self):
        cfg = self.config
        obs_a, seen_by_a = observe(self.agent, self.enemy, cfg.noise,
                                   self._rng_noise_agent, cfg.arena, cfg.kinematics)
        obs_e, seen_by_e = observe(self.enemy, self.agent, cfg.noise,
                                   self._rng_noise_enemy, cfg.arena, cfg.kinematics)
        self._last_seen = (seen_by_a, seen_by_e)
        self._last_obs = (obs_a, obs_e)
        return obs_a, obs_e

    def step(self, agent_action: int, enemy_action: int) -> StepResult:
        if self.done:
            raise ContractError("step() called on a finished episode; call reset()")
        cfg = self.config
        # both successors are computed from the current poses before either is stored
        new_agent = step_aircraft(self.agent, action_from_index(agent_action),
                                  cfg.kinematics, cfg.arena)
        new_enemy = step_aircraft(self.enemy, action_from_index(enemy_action),
                                  cfg.kinematics, cfg.arena)
        self.agent, self.enemy = new_agent, new_enemy
        self.steps += 1

        geom = compute_geometry(new_agent, new_enemy) if (
            new_agent.x, new_agent.y) != (new_enemy.x, new_enemy.y) else None
        if geom is None:
            # exact overlap is a collision; angles are undefined
            outcome, r_agent, r_enemy = Outcome.CRASH, -1.0, -1.0
        else:
            outcome = classify_outcome(geom, cfg.reward)
            r_agent = compute_reward(geom, cfg.reward)
            r_enemy = compute_reward(geom.swapped(), cfg.reward)

        status = Status.RUNNING
        if outcome is Outcome.CRASH:
            status = Status.CRASH
        elif cfg.terminate_on_advantage and outcome is Outcome.AGENT_ADVANTAGE:
            status = Status.AGENT_WIN
        elif cfg.terminate_on_advantage and outcome is Outcome.ENEMY_ADVANTAGE:
            status = Status.ENEMY_WIN
        elif self.steps >= cfg.episode_length:
            status = Status.TIMEOUT
        self.status = status
        self.done = status is not Status.RUNNING

        if geom is None:
            # keep observations defined by reusing the previous perception
            obs_a, obs_e = self._last_obs
        else:
            obs_a, obs_e = self._perceive()
        stacked_a = self._stack_agent.push(obs_a)
        stacked_e = self._stack_enemy.push(obs_e)
        if self.record:
            self._record(obs_a, obs_e, agent_action, enemy_action, r_agent, r_enemy)
        return StepResult(stacked_a, stacked_e, r_agent, r_enemy, self.done, status)

    def _record(self, obs_a, obs_e, act_a, act_e, r_a, r_e):
        a, e = self.agent, self.enemy
        sa, se = self._last_seen
        self.trace.append(
            [self.steps, self.status.value, a.x, a.y, a.psi, a.v,
             e.x, e.y, e.psi, e.v, sa.x, sa.y, sa.psi, se.x, se.y, se.psi]
            + list(obs_a) + list(obs_e) + [int(act_a), int(act_e), r_a, r_e])

    def write_trace(self, path) -> None:
        """Write the recorded episode as CSV with ``TRACE_HEADER`` columns."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            for row in self.trace:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                            for v in row])


def make_env(config: EnvConfig, **overrides) -> AirCombatEnv:
    return AirCombatEnv(replace(config, **overrides) if overrides else config)
