"""System model of a single energy-harvesting sensor.

Battery, request and AoI dynamics plus the per-slot on-demand AoI cost.
Everything here is a pure function over small value types.
"""
from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class ModelParams:
    """Scalar problem definition.

    Parameters
    ----------
    lam : float
        Probability of one energy unit arriving in a slot, in (0, 1].
    p : float
        Probability of a user request in a slot, in [0, 1].
    B : int
        Battery capacity in energy units.
    delta_max : int
        Cap on the AoI counter.
    M : int
        Belief truncation depth (number of tracked consecutive no-command steps).
    theta : float
        Span threshold that stops relative value iteration.
    """

    lam: float
    p: float
    B: int
    delta_max: int
    M: int = 32
    theta: float = 1e-7

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"lam must lie in (0, 1], got {self.lam}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if int(self.B) != self.B or self.B < 1:
            raise ValueError(f"B must be an integer >= 1, got {self.B}")
        if int(self.delta_max) != self.delta_max or self.delta_max < 2:
            raise ValueError(f"delta_max must be an integer >= 2, got {self.delta_max}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be an integer >= 1, got {self.M}")
        if not self.theta > 0.0:
            raise ValueError(f"theta must be positive, got {self.theta}")

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class EnvState:
    """Full (partly hidden) state: true battery, request, AoI, last reported battery."""

    b: int
    r: int
    delta: int
    b_tilde: int


def battery_step(b: int, e: int, d: int, B: int) -> int:
    """Next battery level: ``min(b + e - d, B)``."""
    if not 0 <= b <= B:
        raise ValueError(f"battery level {b} outside [0, {B}]")
    if d == 1 and b == 0:
        raise ValueError("cannot transmit from an empty battery")
    return min(b + e - d, B)


def aoi_step(delta: int, d: int, delta_max: int) -> int:
    if d == 1:
        return 1
    return min(delta + 1, delta_max)


def on_demand_aoi(r: int, d: int, delta: int, delta_max: int) -> int:
    """AoI seen by the users in a slot; zero when nobody asked."""
    return r * min((1 - d) * delta + 1, delta_max)


def immediate_cost(s: EnvState, a: int, delta_max: int) -> int:
    d = a * (s.b >= 1)
    return on_demand_aoi(s.r, d, s.delta, delta_max)
