"""Lane-control policy tables: the decision tree shipped as first-match-wins data."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

import jsonschema

from .types import EventDescriptor, EventKind, GantryDecision, LaneState, Source


class SpeedBin(str, Enum):
    LOW = "low"
    HIGH = "high"


class DistanceBin(str, Enum):
    NEAR = "near"
    FAR = "far"


class GantryRole(str, Enum):
    NEAREST = "nearest"  # first gantry upstream of the event
    UPSTREAM = "upstream"  # further upstream
    DOWNSTREAM = "downstream"  # event lies behind the gantry


RULE_SCHEMA = {
    "type": "object",
    "required": ["lane_count", "speed_threshold_mph", "distance_threshold_mi", "rules"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "lane_count": {"type": "integer", "minimum": 2},
        "speed_threshold_mph": {"type": "number", "exclusiveMinimum": 0},
        "distance_threshold_mi": {"type": "number", "exclusiveMinimum": 0},
        "rules": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["when", "states"],
                "additionalProperties": False,
                "properties": {
                    "when": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "speed": {"enum": [b.value for b in SpeedBin]},
                            "event": {"enum": [k.value for k in EventKind]},
                            "distance": {"enum": [b.value for b in DistanceBin]},
                            "lane": {"type": "integer", "minimum": 0},
                            "role": {"enum": [r.value for r in GantryRole]},
                        },
                    },
                    "states": {"type": "array", "items": {"enum": ["Open", "Merge", "Closed"]}},
                },
            },
        },
    },
}


@dataclass(frozen=True)
class DecisionInput:
    """Inputs to the decision tree for one gantry."""

    speed: float | None  # prevailing mph at the gantry's detectors; None when all lanes are empty
    event: EventDescriptor
    distance_to_event: float | None = None  # miles, positive downstream of the gantry
    event_lane: int | None = None


@dataclass(frozen=True)
class Rule:
    when: dict
    states: tuple[LaneState, ...]

    def matches(self, key: dict) -> bool:
        return all(key.get(k) == v for k, v in self.when.items())


@dataclass(frozen=True)
class PolicyTable:
    rules: tuple[Rule, ...]
    lane_count: int = 3
    speed_threshold_mph: float = 20.0
    distance_threshold_mi: float = 0.2
    name: str = ""

    @classmethod
    def from_dict(cls, data: dict) -> PolicyTable:
        jsonschema.validate(data, RULE_SCHEMA)
        n = data["lane_count"]
        rules = []
        for k, r in enumerate(data["rules"]):
            if len(r["states"]) != n:
                raise ValueError(f"rules[{k}]: {len(r['states'])} states for {n} lanes")
            lane = r["when"].get("lane")
            if lane is not None and lane >= n:
                raise ValueError(f"rules[{k}]: lane {lane} out of range")
            rules.append(Rule(dict(r["when"]), tuple(LaneState.parse(s) for s in r["states"])))
        return cls(tuple(rules), n, float(data["speed_threshold_mph"]),
                   float(data["distance_threshold_mi"]), data.get("name", ""))

    @classmethod
    def load(cls, path: str | Path | None = None) -> PolicyTable:
        """Load a table from JSON; ``None`` gives the packaged default."""
        if path is None:
            text = resources.files("atmguard").joinpath("data/default_policy.json").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lane_count": self.lane_count,
            "speed_threshold_mph": self.speed_threshold_mph,
            "distance_threshold_mi": self.distance_threshold_mi,
            "rules": [{"when": dict(r.when), "states": [s.label for s in r.states]} for r in self.rules],
        }

    # ------------------------------------------------------------ lookups
    def key_for(self, inp: DecisionInput, role: GantryRole | None) -> dict:
        speed = SpeedBin.HIGH if inp.speed is None or inp.speed >= self.speed_threshold_mph else SpeedBin.LOW
        key = {"speed": speed.value, "event": inp.event.kind.value}
        if inp.event.kind is not EventKind.NONE:
            d = inp.distance_to_event
            key["distance"] = (DistanceBin.NEAR if 0 <= d < self.distance_threshold_mi else DistanceBin.FAR).value
            key["lane"] = inp.event_lane
            key["role"] = role.value
        return key

    def lookup(self, key: dict) -> tuple[LaneState, ...]:
        for rule in self.rules:
            if rule.matches(key):
                return rule.states
        raise LookupError(f"no rule matches {key}")

    def input_space(self):
        """Every point of the finite, binned input space."""
        for speed, event, dist, lane, role in itertools.product(
                SpeedBin, EventKind, DistanceBin, range(self.lane_count), GantryRole):
            key = {"speed": speed.value, "event": event.value}
            if event is not EventKind.NONE:
                key.update(distance=dist.value, lane=lane, role=role.value)
            yield key


def gantry_role(gantry: int, gantry_positions: tuple[float, ...], event_position: float) -> GantryRole:
    if event_position < gantry_positions[gantry]:
        return GantryRole.DOWNSTREAM
    upstream_of_event = [g for g, x in enumerate(gantry_positions) if x <= event_position]
    return GantryRole.NEAREST if gantry == max(upstream_of_event) else GantryRole.UPSTREAM


def decide_lane_states(inp: DecisionInput, table: PolicyTable, gantry: int, *,
                       role: GantryRole | None = None, timestamp: float = 0.0,
                       source: Source = Source.ATM) -> GantryDecision:
    """Pure lookup of the states one gantry should display.

    ``role`` defaults to ``NEAREST`` when the event lies downstream of the
    gantry and ``DOWNSTREAM`` otherwise; callers with several gantries pass it
    explicitly (see :func:`gantry_role`).
    """
    if role is None and inp.event.kind is not EventKind.NONE:
        role = GantryRole.NEAREST if inp.distance_to_event >= 0 else GantryRole.DOWNSTREAM
    states = table.lookup(table.key_for(inp, role))
    return GantryDecision(gantry, states, timestamp, source)


def check_totality(table: PolicyTable) -> list[dict]:
    """Inputs for which no rule fires (empty when the table is total)."""
    missing = []
    for key in table.input_space():
        try:
            table.lookup(key)
        except LookupError:
            missing.append(key)
    return missing
