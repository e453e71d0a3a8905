"""Dual-channel monitoring: a CV-fed channel checks the ATM channel's lane states."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .types import CVReport, DetectorSample, GantryDecision, RoadGeometry, Source, mph_to_ms


class Verdict(str, Enum):
    MATCH = "Match"
    MISMATCH = "Mismatch"


@dataclass(frozen=True)
class MatchOutcome:
    gantry: int
    atm: GantryDecision
    mon: GantryDecision
    verdict: Verdict
    differing_lanes: tuple[int, ...]

    @property
    def atm_states(self):
        return self.atm.states

    @property
    def mon_states(self):
        return self.mon.states


@dataclass(frozen=True)
class Alert:
    timestamp: float
    gantry: int
    outcome: MatchOutcome
    action: str = "OverrideApplied"

    def record(self) -> dict:
        return {"t": self.timestamp, "type": "alert", "gantry": self.gantry,
                "atm_states": self.outcome.atm.labels(), "mon_states": self.outcome.mon.labels(),
                "differing_lanes": list(self.outcome.differing_lanes), "action": self.action}


def match_states(atm: GantryDecision, mon: GantryDecision) -> MatchOutcome:
    if atm.gantry != mon.gantry or atm.timestamp != mon.timestamp:
        raise ValueError(f"cannot match gantry {atm.gantry}@{atm.timestamp} "
                         f"against gantry {mon.gantry}@{mon.timestamp}")
    if len(atm.states) != len(mon.states):
        raise ValueError("decisions have different lane counts")
    diff = tuple(i for i, (a, m) in enumerate(zip(atm.states, mon.states)) if a != m)
    return MatchOutcome(atm.gantry, atm, mon, Verdict.MISMATCH if diff else Verdict.MATCH, diff)


def resolve(outcome: MatchOutcome) -> tuple[GantryDecision, Alert | None]:
    """Display the ATM states on a match; otherwise override with the monitor's and alert."""
    if outcome.verdict is Verdict.MATCH:
        return outcome.atm, None
    final = GantryDecision(outcome.gantry, outcome.mon.states, outcome.mon.timestamp, Source.MONITORING)
    return final, Alert(outcome.mon.timestamp, outcome.gantry, outcome)


class CVAggregator:
    """Builds detector-equivalent samples from a stream of CV reports.

    A vehicle counts at a station when two consecutive reports straddle the
    station position; the crossing speed is the later report's. This is the
    same crossing set a point detector sees, so with full penetration the two
    channels get identical samples.
    """

    def __init__(self, geometry: RoadGeometry, *, vehicle_length: float = 5.0,
                 stopped_speed_ms: float = 0.5):
        self.geometry = geometry
        self.length = vehicle_length
        self.stopped_mph = stopped_speed_ms / mph_to_ms(1.0)
        self._dx = np.array(geometry.detector_positions_m)
        self._prev_ids = np.empty(0, dtype=np.int64)
        self._prev_x = np.empty(0)
        self._last = (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), np.empty(0), np.empty(0))
        self._speeds = [[[] for _ in range(geometry.lane_count)] for _ in self._dx]

    def ingest(self, ids, lanes, xs, mph) -> None:
        """One reporting instant; arrays must be sorted by vehicle id."""
        ids = np.asarray(ids, dtype=np.int64)
        xs = np.asarray(xs, dtype=float)
        if len(self._prev_ids) and len(ids):
            k = np.searchsorted(self._prev_ids, ids)
            k = np.minimum(k, len(self._prev_ids) - 1)
            seen = self._prev_ids[k] == ids
            x_old = np.where(seen, self._prev_x[k], np.nan)
            for s, xd in enumerate(self._dx):
                with np.errstate(invalid="ignore"):
                    hit = np.nonzero(seen & (x_old < xd) & (xs >= xd))[0]
                for i in hit:
                    self._speeds[s][int(lanes[i])].append(float(mph[i]))
        self._prev_ids = ids
        self._prev_x = xs
        self._last = (ids, np.asarray(lanes), xs, np.asarray(mph, dtype=float))

    def ingest_reports(self, reports: Sequence[CVReport]) -> None:
        """Feed a batch of reports from possibly several instants, oldest first."""
        by_time: dict[float, list[CVReport]] = {}
        for r in reports:
            by_time.setdefault(r.timestamp, []).append(r)
        for t in sorted(by_time):
            batch = sorted(by_time[t], key=lambda r: r.vehicle_id)
            self.ingest([r.vehicle_id for r in batch], [r.lane for r in batch],
                        [r.position for r in batch], [r.speed for r in batch])

    def sample(self, interval: int) -> list[DetectorSample]:
        _, lanes, xs, mph = self._last
        stopped = mph < self.stopped_mph
        out = []
        for s, xd in enumerate(self._dx):
            on_det = stopped & (xs - self.length <= xd) & (xs >= xd)
            for ln in range(self.geometry.lane_count):
                speeds = self._speeds[s][ln]
                q = len(speeds)
                if q:
                    u = math.fsum(speeds) / q
                elif np.any(on_det & (lanes == ln)):
                    u = 0.0
                else:
                    u = None
                out.append(DetectorSample(s, ln, interval, u, q))
                speeds.clear()
        return out


def cv_aggregate(reports: Sequence[CVReport], geometry: RoadGeometry, interval: int, *,
                 previous: Sequence[CVReport] = (), vehicle_length: float = 5.0) -> list[DetectorSample]:
    """Aggregate one interval of CV reports into per-(station, lane) samples.

    ``previous`` holds the last reports before the interval so crossings at
    its very start are not missed.
    """
    agg = CVAggregator(geometry, vehicle_length=vehicle_length)
    if previous:
        agg.ingest_reports(previous)
        agg._speeds = [[[] for _ in range(geometry.lane_count)] for _ in agg._dx]
    agg.ingest_reports(reports)
    return agg.sample(interval)


@dataclass
class MonitoringSystem:
    """Matches the two channels gantry by gantry and decides what is displayed."""

    tolerate_single_mismatch: bool = False
    alerts: list[Alert] = field(default_factory=list)
    mismatches: int = 0
    _streak: dict = field(default_factory=dict)

    def arbitrate(self, atm: Sequence[GantryDecision], mon: Sequence[GantryDecision]):
        """Returns (displayed decisions, outcomes, alerts raised this interval)."""
        final, outcomes, raised = [], [], []
        for a, m in zip(atm, mon):
            outcome = match_states(a, m)
            if self.tolerate_single_mismatch and outcome.verdict is Verdict.MISMATCH:
                streak = self._streak.get(a.gantry, 0) + 1
                self._streak[a.gantry] = streak
                if streak < 2:
                    outcome = MatchOutcome(a.gantry, a, a, Verdict.MATCH, ())
            else:
                self._streak[a.gantry] = 0
            shown, alert = resolve(outcome)
            if alert is not None:
                self.mismatches += 1
                self.alerts.append(alert)
                raised.append(alert)
            final.append(shown)
            outcomes.append(outcome)
        return final, outcomes, raised
