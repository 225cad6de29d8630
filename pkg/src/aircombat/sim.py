"""Point-mass aircraft kinematics and close-range combat geometry.

All angles are degrees in [-180, 180); radians appear only inside the
trigonometric calls. One simulation step is one unit of time, so speeds are
metres per step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .exceptions import ContractError, DegenerateGeometryError

N_ACTIONS = 9


def wrap_angle(deg: float) -> float:
    """Wrap an angle in degrees into the half-open interval [-180, 180)."""
    if not math.isfinite(deg):
        raise ContractError(f"cannot wrap non-finite angle {deg!r}")
    out = math.fmod(deg + 180.0, 360.0)
    if out < 0.0:
        out += 360.0
    out -= 180.0
    # fmod of a value a hair below 360 can round up to exactly 180
    if out >= 180.0:
        out -= 360.0
    return out


@dataclass(frozen=True)
class AircraftState:
    x: float
    y: float
    psi: float
    v: float


@dataclass(frozen=True)
class KinematicsParams:
    delta_psi: float = 10.0
    delta_v: float = 0.1
    v_min: float = 4.0
    v_max: float = 8.0

    def __post_init__(self):
        if not (self.delta_psi > 0 and self.delta_v > 0):
            raise ContractError("delta_psi and delta_v must be positive")
        if not self.v_min < self.v_max:
            raise ContractError("v_min must be smaller than v_max")


@dataclass(frozen=True)
class Arena:
    x_min: float = -250.0
    x_max: float = 250.0
    y_min: float = -250.0
    y_max: float = 250.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ContractError("arena bounds must satisfy min < max")

    @property
    def diagonal(self) -> float:
        return math.hypot(self.x_max - self.x_min, self.y_max - self.y_min)

    def clamp(self, x: float, y: float) -> tuple[float, float]:
        return (min(max(x, self.x_min), self.x_max),
                min(max(y, self.y_min), self.y_max))


@dataclass(frozen=True)
class ActionCommand:
    dv_sign: int
    dpsi_sign: int


# Row-major over the 3x3 action matrix: rows are heading change (+1, 0, -1)
# top to bottom, columns are speed change (-1, 0, +1) left to right.
_ACTIONS = tuple(ActionCommand(dv, dpsi)
                 for dpsi in (1, 0, -1) for dv in (-1, 0, 1))


def action_from_index(i: int) -> ActionCommand:
    if isinstance(i, bool) or not 0 <= int(i) < N_ACTIONS or int(i) != i:
        raise ContractError(f"action index must be in 0..8, got {i!r}")
    return _ACTIONS[int(i)]


def step_aircraft(s: AircraftState, a: ActionCommand,
                  p: KinematicsParams, arena: Arena) -> AircraftState:
    """Advance one aircraft by one step.

    Heading is updated first, then speed (clipped), and the position moves
    with the updated heading and speed. The result is clamped to the arena.
    """
    psi = wrap_angle(s.psi + a.dpsi_sign * p.delta_psi)
    v = min(max(s.v + a.dv_sign * p.delta_v, p.v_min), p.v_max)
    rad = math.radians(psi)
    x, y = arena.clamp(s.x + v * math.cos(rad), s.y + v * math.sin(rad))
    return AircraftState(x, y, psi, v)


def bearing(from_x: float, from_y: float, to_x: float, to_y: float) -> float:
    dx = to_x - from_x
    dy = to_y - from_y
    if dx == 0.0 and dy == 0.0:
        raise DegenerateGeometryError(
            f"coincident positions at ({from_x}, {from_y})")
    return math.degrees(math.atan2(dy, dx))


def compute_ata(own_x, own_y, other_x, other_y, own_psi) -> float:
    """Antenna train angle: the other aircraft's bearing off our own nose."""
    return wrap_angle(bearing(own_x, own_y, other_x, other_y) - own_psi)


def compute_aa(agent_x, agent_y, enemy_x, enemy_y, enemy_psi) -> float:
    """Aspect angle: zero when the enemy flies straight away along the LOS."""
    return wrap_angle(bearing(agent_x, agent_y, enemy_x, enemy_y) - enemy_psi)


@dataclass(frozen=True)
class CombatGeometry:
    r: float
    ata_a: float
    ata_e: float
    aa_a: float
    aa_e: float

    def swapped(self) -> CombatGeometry:
        """The same engagement seen from the enemy's side."""
        return replace(self, ata_a=self.ata_e, ata_e=self.ata_a,
                       aa_a=self.aa_e, aa_e=self.aa_a)


def compute_geometry(agent: AircraftState, enemy: AircraftState) -> CombatGeometry:
    r = math.hypot(enemy.x - agent.x, enemy.y - agent.y)
    return CombatGeometry(
        r=r,
        ata_a=compute_ata(agent.x, agent.y, enemy.x, enemy.y, agent.psi),
        ata_e=compute_ata(enemy.x, enemy.y, agent.x, agent.y, enemy.psi),
        aa_a=compute_aa(agent.x, agent.y, enemy.x, enemy.y, enemy.psi),
        aa_e=compute_aa(enemy.x, enemy.y, agent.x, agent.y, agent.psi),
    )
