"""Domain types shared by the simulator, the control channels and the attack model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum

MILE_M = 1609.344
MPH_MS = 0.44704


def mph_to_ms(v):
    return v * MPH_MS


def ms_to_mph(v):
    return v / MPH_MS


class LaneState(IntEnum):
    """Lane control state shown above one lane of a gantry."""

    OPEN = 0
    MERGE = 1
    CLOSED = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, value: str | int | LaneState) -> LaneState:
        if isinstance(value, LaneState):
            return value
        if isinstance(value, int):
            return cls(value)
        return cls[value.upper()]


class Source(str, Enum):
    ATM = "ATMChannel"
    MONITORING = "MonitoringChannel"


class EventKind(str, Enum):
    NONE = "None"
    PAVING = "Paving"
    INCIDENT = "Incident"


@dataclass(frozen=True)
class RoadGeometry:
    """One-direction freeway segment. Distances in miles unless suffixed."""

    length: float = 1.5
    lane_count: int = 3
    gantry_positions: tuple[float, ...] = (0.5, 1.0)
    detector_offset_m: float = 30.0
    incident_zone: tuple[float, float] = (1.0, 1.5)

    def __post_init__(self):
        if self.lane_count < 2:
            raise ValueError("lane_count must be >= 2")
        if self.length <= 0:
            raise ValueError("length must be positive")
        gp = tuple(float(g) for g in self.gantry_positions)
        object.__setattr__(self, "gantry_positions", gp)
        if any(not (0 < g < self.length) for g in gp):
            raise ValueError("gantry positions must lie strictly inside the segment")
        if list(gp) != sorted(set(gp)):
            raise ValueError("gantry positions must be strictly increasing")
        lo, hi = self.incident_zone
        if not (0 <= lo <= hi <= self.length):
            raise ValueError("incident_zone must lie within the segment")
        if not (0 <= self.detector_offset_m < gp[0] * MILE_M):
            raise ValueError("detector offset must keep stations inside the segment")

    @property
    def length_m(self) -> float:
        return self.length * MILE_M

    @property
    def gantry_positions_m(self) -> tuple[float, ...]:
        return tuple(g * MILE_M for g in self.gantry_positions)

    @property
    def detector_positions_m(self) -> tuple[float, ...]:
        """One station per gantry, just upstream of it; each station covers every lane."""
        return tuple(g - self.detector_offset_m for g in self.gantry_positions_m)

    @property
    def detector_positions(self) -> tuple[float, ...]:
        return tuple(x / MILE_M for x in self.detector_positions_m)

    def section(self, gantry: int) -> tuple[float, float]:
        """Section in miles governed by ``gantry``: up to the next gantry or the segment end."""
        start = self.gantry_positions[gantry]
        nxt = self.gantry_positions[gantry + 1] if gantry + 1 < len(self.gantry_positions) else self.length
        return start, nxt


@dataclass(frozen=True)
class DetectorSample:
    """Per-lane aggregate for one station over one collection interval.

    ``U`` is ``None`` for an empty sample: nothing crossed and nothing was
    standing on the detector. A stopped vehicle with no crossings gives
    ``U == 0.0`` and ``Q == 0``.
    """

    station: int
    lane: int
    interval: int
    U: float | None
    Q: int

    @property
    def empty(self) -> bool:
        return self.U is None


@dataclass(frozen=True)
class CVReport:
    vehicle_id: int
    lane: int
    position: float  # meters
    speed: float  # mph
    timestamp: float


@dataclass(frozen=True)
class EventDescriptor:
    kind: EventKind = EventKind.NONE
    lane: int | None = None
    position: float | None = None  # miles
    active_window: tuple[float, float] = (0.0, math.inf)

    def __post_init__(self):
        if self.kind is EventKind.NONE and (self.lane is not None or self.position is not None):
            raise ValueError("an event of kind None carries no lane or position")
        if self.kind is not EventKind.NONE and (self.lane is None or self.position is None):
            raise ValueError(f"{self.kind.value} event needs a lane and a position")

    def active(self, clock: float) -> bool:
        lo, hi = self.active_window
        return self.kind is not EventKind.NONE and lo <= clock < hi


NO_EVENT = EventDescriptor()


@dataclass(frozen=True)
class GantryDecision:
    gantry: int
    states: tuple[LaneState, ...]
    timestamp: float = 0.0
    source: Source = Source.ATM

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(LaneState.parse(s) for s in self.states))

    def labels(self) -> list[str]:
        return [s.label for s in self.states]

    def with_states(self, states) -> GantryDecision:
        return GantryDecision(self.gantry, tuple(states), self.timestamp, self.source)


def all_open(gantry: int, lane_count: int, timestamp: float = 0.0,
             source: Source = Source.ATM) -> GantryDecision:
    return GantryDecision(gantry, (LaneState.OPEN,) * lane_count, timestamp, source)


@dataclass
class Vehicle:
    """Read-only view of one simulated car (the simulator stores vehicles as arrays)."""

    id: int
    lane: int
    position: float  # meters from segment start
    speed: float  # mph
    accel: float  # m/s^2
    is_cv: bool
    desired_speed: float  # mph
    pending_merge: int | None = None
    compliant: bool = field(default=True, repr=False)
