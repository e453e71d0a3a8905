"""The ATM channel: incident detection from interval samples and lane-state selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .policy import DecisionInput, PolicyTable, decide_lane_states, gantry_role
from .types import (
    NO_EVENT,
    DetectorSample,
    EventDescriptor,
    EventKind,
    GantryDecision,
    RoadGeometry,
    Source,
)


@dataclass(frozen=True)
class IncidentDetectorParams:
    c1: float = 0.6
    c2: float = 0.1
    debounce: int = 2
    # a latched detection is released after this many consecutive clean samples
    clear_intervals: int = 3
    clear_speed_mph: float = 45.0

    def __post_init__(self):
        if not (0 < self.c1 < 1) or not (0 < self.c2 < 1):
            raise ValueError("C1 and C2 must lie strictly between 0 and 1")
        if self.debounce < 1 or self.clear_intervals < 1:
            raise ValueError("debounce and clear_intervals must be >= 1")


def incident_flags(u_t, q_t, u_prev, q_prev, c1: float, c2: float) -> np.ndarray:
    """Raw per-lane trigger flags; inputs broadcast over ``(..., lanes)``.

    Empty samples are NaN in ``u_*``; ``u_prev``/``q_prev`` all-NaN means no
    previous interval. A lane fires on any of: speed zero, volume dropping to
    zero, or a sharp speed drop while every other lane holds its speed.
    """
    u_t, q_t = np.asarray(u_t, float), np.asarray(q_t, float)
    u_prev, q_prev = np.asarray(u_prev, float), np.asarray(q_prev, float)
    n = u_t.shape[-1]
    has_t = ~np.isnan(u_t)
    has_prev = ~np.isnan(u_prev)
    with np.errstate(invalid="ignore"):
        stopped = has_t & (u_t == 0)
        volume = (q_t == 0) & (q_prev > 0)
        both = has_t & has_prev
        drop = both & (u_t < c1 * u_prev)
        steady = both & (u_t > (1.0 - c2) * u_prev)
    others_steady = (steady.sum(axis=-1, keepdims=True) - steady) == (n - 1)
    return stopped | volume | (drop & others_steady)


def _sample_arrays(samples: Sequence[DetectorSample], lanes: int | None = None):
    ordered = sorted(samples, key=lambda s: s.lane)
    u = np.array([math.nan if s.U is None else s.U for s in ordered], dtype=float)
    q = np.array([s.Q for s in ordered], dtype=float)
    return [s.lane for s in ordered], u, q


def detect_incident(current: Sequence[DetectorSample], previous: Sequence[DetectorSample] | None,
                    params: IncidentDetectorParams) -> list[bool]:
    """Per-lane trigger flags for one station (index = lane)."""
    lanes, u_t, q_t = _sample_arrays(current)
    if len({s.station for s in current}) > 1:
        raise ValueError("samples from more than one station")
    if previous:
        lanes_p, u_p, q_p = _sample_arrays(previous)
        if lanes_p != lanes:
            raise ValueError(f"lane sets differ: {lanes} vs {lanes_p}")
    else:
        u_p = np.full(u_t.shape, math.nan)
        q_p = np.zeros_like(q_t)
    return [bool(f) for f in incident_flags(u_t, q_t, u_p, q_p, params.c1, params.c2)]


@dataclass
class DetectionState:
    """Debounce counters and latched detections, one slot per (station, lane)."""

    runs: np.ndarray
    confirmed: np.ndarray
    clean: np.ndarray
    previous: list[list[DetectorSample]] | None = None
    since: np.ndarray | None = None  # update count at which each latched detection was confirmed
    updates: int = 0

    @classmethod
    def fresh(cls, stations: int, lanes: int) -> DetectionState:
        z = np.zeros((stations, lanes), dtype=np.int64)
        return cls(z.copy(), np.zeros((stations, lanes), dtype=bool), z.copy(), since=z.copy())


def update_detections(by_station: list[list[DetectorSample]], state: DetectionState,
                      params: IncidentDetectorParams) -> np.ndarray:
    """Advance debounce/latch state with one interval of samples; returns confirmed flags."""
    for s, samples in enumerate(by_station):
        prev = state.previous[s] if state.previous is not None else None
        flags = np.array(detect_incident(samples, prev, params))
        state.runs[s] = np.where(flags, state.runs[s] + 1, 0)
        newly = state.runs[s] >= params.debounce
        u = np.array([math.nan if x.U is None else x.U for x in sorted(samples, key=lambda x: x.lane)])
        clean_now = ~flags & ~np.isnan(u) & (np.nan_to_num(u) >= params.clear_speed_mph)
        state.clean[s] = np.where(clean_now, state.clean[s] + 1, np.where(np.isnan(u), state.clean[s], 0))
        released = state.confirmed[s] & (state.clean[s] >= params.clear_intervals)
        kept = state.confirmed[s] & ~released
        if state.since is not None:
            state.since[s] = np.where(kept, state.since[s], state.updates)
        state.confirmed[s] = kept | newly
        state.clean[s] = np.where(state.confirmed[s], state.clean[s], 0)
    state.previous = [list(x) for x in by_station]
    state.updates += 1
    return state.confirmed.copy()


def locate_event(confirmed, geometry: RoadGeometry, known_events: Sequence[EventDescriptor] = (),
                 clock: float = 0.0, confirmed_at=None) -> EventDescriptor:
    """Turn confirmed detections into the event the decision tree acts on.

    A detection at station ``g`` places an incident at the midpoint of the
    section downstream of gantry ``g``. With several detections the
    downstream-most station wins, then the longest-standing detection (when
    ``confirmed_at`` is given) so that congestion spilling into a neighbour
    lane does not move the event, then the lowest lane. Scheduled paving
    events are used only when nothing is detected.
    """
    confirmed = np.asarray(confirmed, dtype=bool)
    for g in range(confirmed.shape[0] - 1, -1, -1):
        lanes = np.nonzero(confirmed[g])[0]
        if confirmed_at is not None and len(lanes) > 1:
            stamp = np.asarray(confirmed_at)[g, lanes]
            lanes = lanes[np.lexsort((lanes, stamp))]
        if len(lanes):
            lo, hi = geometry.section(g)
            return EventDescriptor(EventKind.INCIDENT, int(lanes[0]), (lo + hi) / 2.0, (clock, math.inf))
    for ev in known_events:
        if ev.kind is EventKind.PAVING and ev.active(clock):
            return ev
    return NO_EVENT


def prevailing_speed(samples: Sequence[DetectorSample]) -> float | None:
    vals = [s.U for s in samples if s.U is not None]
    return math.fsum(vals) / len(vals) if vals else None


def split_by_station(samples: Sequence[DetectorSample], stations: int) -> list[list[DetectorSample]]:
    out: list[list[DetectorSample]] = [[] for _ in range(stations)]
    for s in samples:
        out[s.station].append(s)
    return out


@dataclass
class DecisionChannel:
    """Collection -> analysis -> selection loop for one data source.

    The ATM channel and the monitoring channel are two instances of this
    class fed from different data; each owns its own debounce state.
    """

    geometry: RoadGeometry
    table: PolicyTable
    params: IncidentDetectorParams = field(default_factory=IncidentDetectorParams)
    source: Source = Source.ATM
    known_events: tuple[EventDescriptor, ...] = ()
    state: DetectionState = None
    last_event: EventDescriptor = NO_EVENT

    def __post_init__(self):
        if self.table.lane_count != self.geometry.lane_count:
            raise ValueError("policy table lane count does not match the road")
        if self.state is None:
            self.state = DetectionState.fresh(len(self.geometry.gantry_positions), self.geometry.lane_count)

    def update(self, samples: Sequence[DetectorSample], timestamp: float) -> list[GantryDecision]:
        by_station = split_by_station(samples, len(self.geometry.gantry_positions))
        confirmed = update_detections(by_station, self.state, self.params)
        event = locate_event(confirmed, self.geometry, self.known_events, timestamp, self.state.since)
        self.last_event = event
        return decide_all(event, by_station, self.geometry, self.table, timestamp, self.source)


def decide_all(event: EventDescriptor, by_station: list[list[DetectorSample]], geometry: RoadGeometry,
               table: PolicyTable, timestamp: float, source: Source) -> list[GantryDecision]:
    out = []
    gp = geometry.gantry_positions
    for g, samples in enumerate(by_station):
        speed = prevailing_speed(samples)
        if event.kind is EventKind.NONE:
            inp = DecisionInput(speed, event)
            role = None
        else:
            inp = DecisionInput(speed, event, event.position - gp[g], event.lane)
            role = gantry_role(g, gp, event.position)
        out.append(decide_lane_states(inp, table, g, role=role, timestamp=timestamp, source=source))
    return out


def atm_channel_update(samples: Sequence[DetectorSample], channel: DecisionChannel,
                       timestamp: float) -> list[GantryDecision]:
    """One control-interval update of ``channel`` (which carries the debounce state)."""
    return channel.update(samples, timestamp)
