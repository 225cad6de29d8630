"""Frozen-copy self-play opponent."""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError
from .qnet import QNetwork


@dataclass(frozen=True)
class SelfPlayConfig:
    swap_every: int = 50_000
    lam: float = 0.0

    def __post_init__(self):
        if self.swap_every < 1:
            raise ContractError("swap_every must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ContractError("lambda must lie in [0, 1]")


class OpponentPool:
    """Holds the single latest frozen snapshot of the learner.

    The snapshot reference is replaced in one assignment under a lock, so a
    reader sees either the old or the new parameter set, never a mix.
    """

    def __init__(self, learner: QNetwork, step: int = 0):
        self._lock = threading.Lock()
        self.snapshot = learner.copy()
        self.snapshot_step = step
        self.swaps = 0

    def maybe_swap(self, learner: QNetwork, global_step: int, swap_every: int) -> bool:
        if global_step <= 0 or global_step % swap_every:
            return False
        fresh = learner.copy()
        with self._lock:
            self.snapshot = fresh
            self.snapshot_step = global_step
            self.swaps += 1
        return True

    def enemy_action(self, obs, lam: float, rng: np.random.Generator) -> int:
        return enemy_action(self.snapshot, obs, lam, rng)


def enemy_action(snapshot: QNetwork, obs, lam: float, rng: np.random.Generator) -> int:
    """Uniform random action with probability ``lam``, else the frozen greedy one."""
    # one uniform draw per call whatever the branch, so streams stay aligned
    u = rng.random()
    if u < lam:
        return int(rng.integers(snapshot.n_actions))
    return int(np.argmax(snapshot.forward(obs)))
