"""Continuous shaping reward and the positional outcome classifier."""
from __future__ import annotations

import enum
from dataclasses import dataclass

from .exceptions import ContractError
from .sim import CombatGeometry


@dataclass(frozen=True)
class RewardParams:
    crash_min: float = 0.0
    crash_max: float = 10.0
    engage_max: float = 100.0
    ata_gate: float = 30.0
    aa_gate: float = 60.0

    def __post_init__(self):
        if not 0 <= self.crash_min < self.crash_max <= self.engage_max:
            raise ContractError("need 0 <= crash_min < crash_max <= engage_max")
        if self.ata_gate <= 0 or self.aa_gate <= 0:
            raise ContractError("angle gates must be positive")


class Outcome(enum.Enum):
    CRASH = "crash"
    AGENT_ADVANTAGE = "agent_advantage"
    ENEMY_ADVANTAGE = "enemy_advantage"
    NEUTRAL = "neutral"


def classify_outcome(g: CombatGeometry, p: RewardParams = RewardParams()) -> Outcome:
    if p.crash_min <= g.r < p.crash_max:
        return Outcome.CRASH
    if p.crash_max <= g.r <= p.engage_max:
        # agent side is tested first, so a mutual head-on gate goes to the agent
        if abs(g.ata_a) <= p.ata_gate and abs(g.aa_a) < p.aa_gate:
            return Outcome.AGENT_ADVANTAGE
        if abs(g.ata_e) <= p.ata_gate and abs(g.aa_e) < p.aa_gate:
            return Outcome.ENEMY_ADVANTAGE
    return Outcome.NEUTRAL


def compute_reward(g: CombatGeometry, p: RewardParams = RewardParams()) -> float:
    """Reward in [-1, 1] for the agent side of ``g``.

    Uses |ATA| in the advantage formulas so a negative train angle cannot
    push the reward outside [-1, 1].
    """
    outcome = classify_outcome(g, p)
    if outcome is Outcome.CRASH:
        return -1.0
    if outcome is Outcome.AGENT_ADVANTAGE:
        return 1.0 - abs(g.ata_a) / p.ata_gate
    if outcome is Outcome.ENEMY_ADVANTAGE:
        return abs(g.ata_e) / p.ata_gate - 1.0
    return 0.0
