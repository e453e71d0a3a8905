"""Scenario configuration: strict JSON loading with defaults filled in."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .atm import IncidentDetectorParams
from .sim import ControlParams, DriverParams
from .types import RoadGeometry


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeometryConfig(_Strict):
    length_mi: float = Field(1.5, gt=0)
    lane_count: int = Field(3, ge=2)
    gantry_positions_mi: tuple[float, ...] = (0.5, 1.0)
    detector_offset_m: float = Field(30.0, ge=0)
    incident_zone_mi: tuple[float, float] = (1.0, 1.5)

    def build(self) -> RoadGeometry:
        return RoadGeometry(self.length_mi, self.lane_count, self.gantry_positions_mi,
                            self.detector_offset_m, self.incident_zone_mi)


class DetectorConfig(_Strict):
    c1: float = Field(0.6, gt=0, lt=1)
    c2: float = Field(0.1, gt=0, lt=1)
    debounce: int = Field(2, ge=1)
    clear_intervals: int = Field(3, ge=1)
    clear_speed_mph: float = Field(45.0, ge=0)

    def build(self) -> IncidentDetectorParams:
        return IncidentDetectorParams(self.c1, self.c2, self.debounce, self.clear_intervals, self.clear_speed_mph)


class IncidentConfig(_Strict):
    enabled: bool = True
    lane: int = Field(1, ge=0)  # middle lane
    position_mi: float = 1.25
    start_after_warmup_s: float = Field(60.0, ge=0)
    duration_s: Optional[float] = Field(None, gt=0)


class AttackConfig(_Strict):
    points: tuple[Literal["A", "B", "C"], ...] = ("A", "B")
    rate: float = Field(3.0, ge=0)
    duration_s: tuple[float, float] = (30.0, 120.0)
    fixed_point_a: bool = False
    saturation_vphpl: float = Field(2200.0, gt=0)
    u_max_mph: float = Field(70.0, gt=0)

    @field_validator("duration_s")
    @classmethod
    def _range(cls, v):
        if not (0 < v[0] <= v[1]):
            raise ValueError("duration_s must be [min, max] with 0 < min <= max")
        return v


class MonitoringConfig(_Strict):
    tolerate_single_mismatch: bool = False
    channel_identity: bool = False


class DriverConfig(_Strict):
    desired_mph: float = Field(70.0, gt=0)
    desired_jitter_mph: float = Field(3.0, ge=0)
    time_headway_s: float = Field(1.2, gt=0)
    max_accel: float = Field(1.5, gt=0)
    comfort_decel: float = Field(2.0, gt=0)
    standstill_gap_m: float = Field(2.0, gt=0)
    vehicle_length_m: float = Field(5.0, gt=0)
    politeness: float = Field(0.3, ge=0)
    lc_threshold: float = Field(0.2, ge=0)
    safe_decel: float = Field(1.0, gt=0)
    mandatory_safe_decel: float = Field(4.0, gt=0)
    lc_cooldown_s: float = Field(4.0, ge=0)
    courtesy_decel: float = Field(1.0, ge=0)
    courtesy_range_m: float = Field(200.0, ge=0)
    courtesy_depth: int = Field(2, ge=0)
    compliance: float = Field(1.0, ge=0, le=1)
    cv_penetration: float = Field(1.0, ge=0, le=1)
    sign_visibility_m: float = Field(805.0, gt=0)
    closure_grace_m: float = Field(200.0, ge=0)
    incident_sight_m: float = Field(60.0, gt=0)
    entry_headway_s: float = Field(1.2, gt=0)

    def build(self) -> tuple[DriverParams, ControlParams]:
        d = DriverParams(
            desired_mph=self.desired_mph, desired_jitter_mph=self.desired_jitter_mph,
            time_headway=self.time_headway_s, max_accel=self.max_accel, comfort_decel=self.comfort_decel,
            standstill_gap=self.standstill_gap_m, length=self.vehicle_length_m, politeness=self.politeness,
            lc_threshold=self.lc_threshold, safe_decel=self.safe_decel,
            mandatory_safe_decel=self.mandatory_safe_decel, lc_cooldown_s=self.lc_cooldown_s,
            courtesy_decel=self.courtesy_decel, courtesy_range=self.courtesy_range_m,
            courtesy_depth=self.courtesy_depth)
        c = ControlParams(sign_visibility_m=self.sign_visibility_m, closure_grace_m=self.closure_grace_m,
                          incident_sight_m=self.incident_sight_m, entry_headway_s=self.entry_headway_s)
        return d, c


class ScenarioConfig(_Strict):
    geometry: GeometryConfig = GeometryConfig()
    demand_vph: float = Field(4500.0, gt=0)
    deterministic_demand: bool = False
    warmup_s: float = Field(120.0, gt=0)
    run_s: float = Field(600.0, gt=0)
    dt_s: float = Field(0.5, gt=0)
    collection_interval_s: float = Field(10.0, gt=0)
    detector: DetectorConfig = DetectorConfig()
    policy_table: Optional[str] = None
    incident: IncidentConfig = IncidentConfig()
    attacks: AttackConfig = AttackConfig()
    monitoring: MonitoringConfig = MonitoringConfig()
    driver: DriverConfig = DriverConfig()
    master_seed: int = 0
    replications: int = Field(55, ge=1)
    jobs: Optional[int] = Field(None, ge=1)  # None: one worker per CPU

    @model_validator(mode="after")
    def _consistency(self):
        ratio = self.collection_interval_s / self.dt_s
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(f"collection_interval_s ({self.collection_interval_s}) must be an integer "
                             f"multiple of dt_s ({self.dt_s})")
        for name in ("warmup_s", "run_s"):
            r = getattr(self, name) / self.dt_s
            if abs(r - round(r)) > 1e-9:
                raise ValueError(f"{name} must be a multiple of dt_s")
        if self.incident.lane >= self.geometry.lane_count:
            raise ValueError("incident.lane is out of range")
        self.geometry.build()  # geometry invariants
        return self

    @property
    def steps_per_interval(self) -> int:
        return round(self.collection_interval_s / self.dt_s)

    @property
    def workers(self) -> int:
        return self.jobs if self.jobs is not None else (os.cpu_count() or 1)

    @property
    def horizon_s(self) -> float:
        return self.warmup_s + self.run_s

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


class ConfigError(ValueError):
    pass


def _fmt(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_fmt(err)) from None


def load_config(path: str | Path | None = None) -> ScenarioConfig:
    """Read and validate a JSON scenario; ``None`` gives the defaults."""
    if path is None:
        return ScenarioConfig()
    text = Path(path).read_text()
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(data)
