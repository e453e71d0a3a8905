"""Emulated cyberattacks on the ATM data flow.

Point A corrupts the ATM software's output, point B the detector data it
reads, point C the link between the cabinet and the gantry display.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .types import DetectorSample, GantryDecision, LaneState


class AttackPoint(str, Enum):
    A = "A"
    B = "B"
    C = "C"


@dataclass(frozen=True)
class AttackSpec:
    point: AttackPoint
    start: float
    duration: float
    stream: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("attack duration must be positive")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def active(self, clock: float) -> bool:
        return self.start <= clock < self.end


def schedule_attacks(rate: float, duration_range: tuple[float, float], rng: np.random.Generator, *,
                     window: tuple[float, float], points: Sequence[AttackPoint | str] = ("A", "B")
                     ) -> list[AttackSpec]:
    """Poisson(rate) attacks with uniform start, duration and target point.

    Starts fall in ``window`` (the measured part of the run); windows are cut
    at its end and overlapping windows on the same point are merged.
    """
    if rate < 0:
        raise ValueError("attack rate must be non-negative")
    lo, hi = duration_range
    if lo <= 0 or hi < lo:
        raise ValueError("duration range must satisfy 0 < min <= max")
    t0, t1 = window
    pts = [AttackPoint(p) for p in points]
    count = int(rng.poisson(rate))
    starts = rng.uniform(t0, t1, size=count)
    durations = rng.uniform(lo, hi, size=count)
    which = rng.integers(0, len(pts), size=count) if pts else np.zeros(count, dtype=int)
    raw = sorted((pts[int(w)], float(s), float(min(s + d, t1))) for w, s, d in zip(which, starts, durations))

    merged: list[list] = []
    for point, s, e in raw:
        if merged and merged[-1][0] is point and s <= merged[-1][2]:
            merged[-1][2] = max(merged[-1][2], e)
        else:
            merged.append([point, s, e])
    merged.sort(key=lambda m: (m[1], m[0].value))
    return [AttackSpec(p, s, e - s, k) for k, (p, s, e) in enumerate(merged) if e > s]


def _draw_states(n: int, rng) -> tuple[LaneState, ...]:
    return tuple(LaneState(int(i)) for i in rng.integers(0, 3, size=n))


def apply_point_a(decision: GantryDecision, rng) -> GantryDecision:
    """Replace every lane state with a uniform draw; the source tag is left as is."""
    return decision.with_states(_draw_states(len(decision.states), rng))


def apply_point_c(display: GantryDecision, rng) -> GantryDecision:
    """Same corruption as point A, applied to what the gantry actually shows."""
    return display.with_states(_draw_states(len(display.states), rng))


def q_max(saturation_vphpl: float, interval_s: float) -> int:
    return math.ceil(saturation_vphpl * interval_s / 3600.0)


def apply_point_b(samples: Sequence[DetectorSample], rng, *, u_max: float = 70.0,
                  qmax: int = 7) -> list[DetectorSample]:
    """Scramble speed and count of every sample, keeping its station/lane/interval."""
    n = len(samples)
    if n == 0:
        return []
    us = rng.uniform(0.0, u_max, size=n)
    qs = rng.integers(0, qmax + 1, size=n)
    return [DetectorSample(s.station, s.lane, s.interval, float(u), int(q)) for s, u, q in zip(samples, us, qs)]


@dataclass
class AttackInjector:
    """Holds one replication's schedule and its dedicated random substream."""

    schedule: list[AttackSpec]
    rng: np.random.Generator
    u_max: float = 70.0
    qmax: int = 7
    fixed_point_a: bool = False
    _fixed: dict = field(default_factory=dict)

    def active(self, point: AttackPoint, clock: float) -> AttackSpec | None:
        for a in self.schedule:
            if a.point is point and a.active(clock):
                return a
        return None

    def corrupt_samples(self, samples, clock):
        a = self.active(AttackPoint.B, clock)
        if a is None:
            return samples, None
        return apply_point_b(samples, self.rng, u_max=self.u_max, qmax=self.qmax), a

    def corrupt_decisions(self, decisions, clock):
        a = self.active(AttackPoint.A, clock)
        if a is None:
            return decisions, None
        if not self.fixed_point_a:
            return [apply_point_a(d, self.rng) for d in decisions], a
        key = (a.stream,)
        if key not in self._fixed:
            self._fixed[key] = [apply_point_a(d, self.rng).states for d in decisions]
        return [d.with_states(s) for d, s in zip(decisions, self._fixed[key])], a

    def corrupt_display(self, decisions, clock):
        a = self.active(AttackPoint.C, clock)
        if a is None:
            return decisions, None
        return [apply_point_c(d, self.rng) for d in decisions], a
