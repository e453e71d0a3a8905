"""The four-case experiment: paired replications, mean speeds, comparison report."""

from __future__ import annotations

import csv
import io
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .atm import DecisionChannel
from .attacks import AttackInjector, AttackPoint, q_max, schedule_attacks
from .config import ScenarioConfig
from .demand import spawn_demand
from .eventlog import atomic_write_text, write_jsonl
from .monitoring import CVAggregator, MonitoringSystem, Verdict, match_states, resolve
from .policy import PolicyTable
from .sim import World, mean_network_speed
from .stats import paired_t_test
from .types import EventDescriptor, EventKind, GantryDecision, Source, all_open


class CaseId(str, Enum):
    BASELINE = "Baseline"
    CASE1 = "Case1"
    CASE2 = "Case2"
    CASE3 = "Case3"

    @property
    def atm(self) -> bool:
        return self is not CaseId.BASELINE

    @property
    def attacks(self) -> bool:
        return self in (CaseId.CASE2, CaseId.CASE3)

    @property
    def monitoring(self) -> bool:
        return self is CaseId.CASE3


CASES = (CaseId.BASELINE, CaseId.CASE1, CaseId.CASE2, CaseId.CASE3)
CSV_HEADER = ["case", "rep_index", "seed", "mean_speed_mph", "alerts", "attacks"]


@dataclass(frozen=True)
class ReplicationResult:
    case: CaseId
    rep_index: int
    seed: int
    mean_speed: float
    alerts: int
    attacks: int
    log_path: str | None = None


@dataclass
class IntervalRecord:
    """What each channel decided and what was displayed at one control instant."""

    t: float
    atm: list[GantryDecision]
    mon: list[GantryDecision] | None
    displayed: list[GantryDecision]
    verdicts: list[Verdict]


@dataclass
class RunTrace:
    result: ReplicationResult
    events: list[dict]
    speeds: list[float | None]
    intervals: list[IntervalRecord] = field(default_factory=list)
    injected: int = 0
    exited: int = 0
    present: int = 0
    queued: int = 0


def replication_seed(master_seed: int, rep_index: int) -> int:
    """Seed shared by every case at this replication index (common random numbers)."""
    return int(np.random.SeedSequence([master_seed, rep_index]).generate_state(1, np.uint64)[0])


def replication_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (demand, attack) generators; switching attacks off leaves demand untouched."""
    demand_ss, attack_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(demand_ss), np.random.default_rng(attack_ss)


def _decision_record(d: GantryDecision) -> dict:
    return {"t": d.timestamp, "type": "decision", "gantry": d.gantry, "states": d.labels(),
            "source": d.source.value}


def _samples_json(samples) -> list:
    return [[s.station, s.lane, s.U, s.Q] for s in samples]


def simulate(config: ScenarioConfig, case: CaseId, rep_index: int, *,
             table: PolicyTable | None = None) -> RunTrace:
    """Run one replication and keep everything needed to audit it."""
    geometry = config.geometry.build()
    driver, control = config.driver.build()
    params = config.detector.build()
    table = table if table is not None else PolicyTable.load(config.policy_table)
    seed = replication_seed(config.master_seed, rep_index)
    demand_rng, attack_rng = replication_streams(seed)
    horizon = config.horizon_s
    dcfg = config.driver
    arrivals = spawn_demand(config.demand_vph, demand_rng, horizon, deterministic=config.deterministic_demand,
                            desired_mph=dcfg.desired_mph, desired_jitter_mph=dcfg.desired_jitter_mph,
                            cv_penetration=dcfg.cv_penetration, compliance=dcfg.compliance)
    events: list[dict] = []
    world = World(geometry, arrivals, driver=driver, control=control, dt=config.dt_s, log=events.append)

    inc = config.incident
    incident = None
    if inc.enabled:
        t0 = config.warmup_s + inc.start_after_warmup_s
        t1 = math.inf if inc.duration_s is None else t0 + inc.duration_s
        incident = EventDescriptor(EventKind.INCIDENT, inc.lane, inc.position_mi, (t0, t1))

    atm = mon = cv = injector = None
    monitor = MonitoringSystem(config.monitoring.tolerate_single_mismatch)
    if case.atm:
        atm = DecisionChannel(geometry, table, params, Source.ATM)
    if case.monitoring:
        mon = DecisionChannel(geometry, table, params, Source.MONITORING)
        if not config.monitoring.channel_identity:
            cv = CVAggregator(geometry, vehicle_length=driver.length, stopped_speed_ms=control.stopped_speed_ms)
    if case.attacks:
        a = config.attacks
        schedule = schedule_attacks(a.rate, a.duration_s, attack_rng, window=(config.warmup_s, horizon),
                                    points=a.points)
        injector = AttackInjector(schedule, attack_rng, u_max=a.u_max_mph,
                                  qmax=q_max(a.saturation_vphpl, config.collection_interval_s),
                                  fixed_point_a=a.fixed_point_a)
        for spec in schedule:
            events.append({"t": 0.0, "type": "attack", "event": "scheduled", "point": spec.point.value,
                           "window": [spec.start, spec.end]})

    ng, nl = len(geometry.gantry_positions), geometry.lane_count
    displayed = [all_open(g, nl) for g in range(ng)]
    speeds: list[float | None] = []
    intervals: list[IntervalRecord] = []
    alerts = 0
    spi = config.steps_per_interval
    total_steps = round(horizon / config.dt_s)

    for _ in range(total_steps):
        if incident is not None:
            world.apply_incident(incident)
        world.step()
        if cv is not None:
            cv.ingest(*world.cv_snapshot())
        if world.step_index % spi:
            continue
        k = world.step_index // spi
        t = world.time
        samples = world.sample_detectors(k)
        events.append({"t": t, "type": "detector", "interval": k, "samples": _samples_json(samples)})
        net = world.take_network_speed()
        measured = t > config.warmup_s + 1e-9
        events.append({"t": t, "type": "network", "interval": k, "mph": net, "measured": measured})
        if measured:
            speeds.append(net)
        if atm is None:
            continue

        atm_in = samples
        if injector is not None:
            atm_in, spec = injector.corrupt_samples(samples, t)
            if spec is not None:
                events.append({"t": t, "type": "attack", "event": "applied", "point": "B",
                               "window": [spec.start, spec.end], "before": _samples_json(samples),
                               "after": _samples_json(atm_in)})
        atm_dec = atm.update(atm_in, t)
        if injector is not None:
            corrupted, spec = injector.corrupt_decisions(atm_dec, t)
            if spec is not None:
                for before, after in zip(atm_dec, corrupted):
                    events.append({"t": t, "type": "attack", "event": "applied", "point": "A",
                                   "window": [spec.start, spec.end], "gantry": before.gantry,
                                   "before": before.labels(), "after": after.labels()})
            atm_dec = corrupted

        mon_dec = None
        verdicts = [Verdict.MATCH] * ng
        final = atm_dec
        if mon is not None:
            # identity mode hands the monitor exactly what the ATM channel consumed
            mon_in = atm_in if cv is None else cv.sample(k)
            mon_dec = mon.update(mon_in, t)
            final, outcomes, raised = monitor.arbitrate(atm_dec, mon_dec)
            verdicts = [o.verdict for o in outcomes]
            for alert in raised:
                events.append(alert.record())
                events.append({"t": t, "type": "override", "gantry": alert.gantry, "stage": "A/B",
                               "atm_states": alert.outcome.atm.labels(),
                               "displayed": final[alert.gantry].labels(), "source": Source.MONITORING.value})
            alerts += len(raised)
        elif cv is not None:
            cv.sample(k)

        if injector is not None:
            shown, spec = injector.corrupt_display(final, t)
            if spec is not None:
                for before, after in zip(final, shown):
                    events.append({"t": t, "type": "attack", "event": "applied", "point": "C",
                                   "window": [spec.start, spec.end], "gantry": before.gantry,
                                   "before": before.labels(), "after": after.labels()})
                if mon_dec is not None:
                    # read-back of the gantry display checked against the monitoring channel
                    checked = []
                    for readback, m in zip(shown, mon_dec):
                        out, alert = resolve(match_states(readback, m))
                        if alert is not None:
                            alerts += 1
                            monitor.mismatches += 1
                            monitor.alerts.append(alert)
                            events.append(alert.record())
                            events.append({"t": t, "type": "override", "gantry": alert.gantry, "stage": "C",
                                           "atm_states": readback.labels(), "displayed": out.labels(),
                                           "source": Source.MONITORING.value})
                        checked.append(out)
                    shown = checked
                final = shown

        for g, d in enumerate(final):
            if d.states != displayed[g].states:
                events.append(_decision_record(d))
        displayed = list(final)
        world.apply_lane_states(displayed)
        intervals.append(IntervalRecord(t, atm_dec, mon_dec, list(final), verdicts))

    result = ReplicationResult(case, rep_index, seed, mean_network_speed(speeds), alerts,
                               len(injector.schedule) if injector is not None else 0)
    return RunTrace(result, events, speeds, intervals, world.arrived, world.exited, world.n_vehicles,
                    world.queued)


def run_replication(config: ScenarioConfig, case: CaseId, rep_index: int, *,
                    log_dir: str | Path | None = None) -> ReplicationResult:
    trace = simulate(config, case, rep_index)
    if log_dir is None:
        return trace.result
    path = Path(log_dir) / f"{case.value}_rep{rep_index:03d}.jsonl"
    write_jsonl(path, trace.events)
    r = trace.result
    return ReplicationResult(r.case, r.rep_index, r.seed, r.mean_speed, r.alerts, r.attacks, str(path))


def _run_one(args):
    config, case, rep, log_dir = args
    return run_replication(config, case, rep, log_dir=log_dir)


def _run_all(work, jobs: int) -> list[ReplicationResult]:
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as pool:
            return list(pool.map(_run_one, work))
    return [_run_one(w) for w in work]


def run_case(config: ScenarioConfig, case: CaseId, n: int, *, jobs: int = 1,
             log_dir: str | Path | None = None) -> list[ReplicationResult]:
    """``n`` replications of one case, ordered by rep_index whatever the execution order."""
    if n < 2:
        raise ValueError("at least two replications are needed for a paired comparison")
    results = _run_all([(config, case, rep, log_dir) for rep in range(n)], jobs)
    return sorted(results, key=lambda r: r.rep_index)


# ------------------------------------------------------------------ reporting

@dataclass(frozen=True)
class CaseSummary:
    case: CaseId
    n: int
    mean: float
    sd: float


@dataclass(frozen=True)
class Comparison:
    case: CaseId
    reference: CaseId
    percent_change: float
    t: float
    p: float
    degenerate: bool = False


@dataclass
class ComparisonReport:
    cases: dict[CaseId, CaseSummary]
    comparisons: dict[tuple[CaseId, CaseId], Comparison]
    warnings: list[str] = field(default_factory=list)

    def comparison(self, case: CaseId | str, reference: CaseId | str) -> Comparison:
        return self.comparisons[(CaseId(case), CaseId(reference))]

    def to_dict(self) -> dict:
        return {
            "cases": {c.value: {"n": s.n, "mean_speed_mph": s.mean, "sd_mph": s.sd} for c, s in self.cases.items()},
            "comparisons": [
                {"case": k[0].value, "reference": k[1].value, "percent_change": v.percent_change,
                 "t": None if math.isinf(v.t) else v.t, "p": v.p, "degenerate_variance": v.degenerate}
                for k, v in self.comparisons.items()
            ],
            "warnings": list(self.warnings),
        }


SMALL_SAMPLE = 10


def build_report(results: Mapping[CaseId | str, Sequence[ReplicationResult]]) -> ComparisonReport:
    by_case = {CaseId(k): sorted(v, key=lambda r: r.rep_index) for k, v in results.items()}
    missing = [c.value for c in CASES if c not in by_case]
    if missing:
        raise ValueError(f"missing case(s): {', '.join(missing)}")
    sizes = {len(v) for v in by_case.values()}
    if len(sizes) != 1:
        raise ValueError("all cases need the same number of replications")
    n = sizes.pop()
    reps = [r.rep_index for r in by_case[CaseId.BASELINE]]
    for c in CASES:
        if [r.rep_index for r in by_case[c]] != reps:
            raise ValueError(f"{c.value}: replication indices do not pair with Baseline")

    speeds = {c: [r.mean_speed for r in by_case[c]] for c in CASES}
    summaries = {c: CaseSummary(c, n, statistics.fmean(speeds[c]), statistics.stdev(speeds[c]) if n > 1 else 0.0)
                 for c in CASES}
    comps = {}
    for i, ref in enumerate(CASES[:-1]):
        for case in CASES[i + 1:]:
            tt = paired_t_test(speeds[case], speeds[ref])
            m_ref = summaries[ref].mean
            pct = (summaries[case].mean - m_ref) / m_ref * 100.0
            comps[(case, ref)] = Comparison(case, ref, pct, tt.t, tt.p, tt.degenerate)
    warnings = []
    if n < SMALL_SAMPLE:
        warnings.append(f"small sample: {n} replications per case; paired tests have little power")
    return ComparisonReport(summaries, comps, warnings)


def format_p(p: float) -> str:
    if p < 0.01:
        return "<0.01"
    return f">{math.floor(p * 100) / 100:.2f}"


def render_report(report: ComparisonReport) -> str:
    flags = {CaseId.BASELINE: ("No", "No", "No"), CaseId.CASE1: ("Yes", "No", "No"),
             CaseId.CASE2: ("Yes", "Yes", "No"), CaseId.CASE3: ("Yes", "Yes", "Yes")}
    head = (f"{'Scenario':<9} {'ATM':<4} {'Attack':<7} {'Monitor':<8} {'Mean(mph)':>9} {'SD':>4}   "
            f"{'vs Baseline':<14} {'vs Case1':<14} {'vs Case2':<14}")
    lines = [head, "-" * len(head)]
    for case in CASES:
        s = report.cases[case]
        cells = []
        for ref in CASES[:-1]:
            if ref == case:
                cells.append("base")
            elif (case, ref) in report.comparisons:
                c = report.comparisons[(case, ref)]
                cells.append(f"{round(c.percent_change):d}% {format_p(c.p)}")
            else:
                cells.append("N/A")
        atm, att, mon = flags[case]
        lines.append(f"{case.value:<9} {atm:<4} {att:<7} {mon:<8} {round(s.mean):>9d} {round(s.sd):>4d}   "
                     + " ".join(f"{c:<14}" for c in cells))
    for w in report.warnings:
        lines.append(f"warning: {w}")
    return "\n".join(lines) + "\n"


def replications_csv(results: Sequence[ReplicationResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in results:
        w.writerow([r.case.value, r.rep_index, r.seed, repr(float(r.mean_speed)), r.alerts, r.attacks])
    return buf.getvalue()


def write_replications_csv(path: str | Path, results: Sequence[ReplicationResult]) -> None:
    atomic_write_text(path, replications_csv(results))


def read_replications_csv(path: str | Path) -> dict[CaseId, list[ReplicationResult]]:
    out: dict[CaseId, list[ReplicationResult]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            r = ReplicationResult(CaseId(row["case"]), int(row["rep_index"]), int(row["seed"]),
                                  float(row["mean_speed_mph"]), int(row["alerts"]), int(row["attacks"]))
            out.setdefault(r.case, []).append(r)
    return out


def run_table1(config: ScenarioConfig, *, n: int | None = None, jobs: int = 1,
               log_dir: str | Path | None = None) -> tuple[list[ReplicationResult], ComparisonReport]:
    """All four cases; every replication goes into one worker pool."""
    n = config.replications if n is None else n
    if n < 2:
        raise ValueError("at least two replications are needed for a paired comparison")
    work = [(config, case, rep, log_dir) for case in CASES for rep in range(n)]
    done = _run_all(work, jobs)
    results = sorted(done, key=lambda r: (CASES.index(r.case), r.rep_index))
    grouped: dict[CaseId, list[ReplicationResult]] = {}
    for r in results:
        grouped.setdefault(r.case, []).append(r)
    return results, build_report(grouped)
