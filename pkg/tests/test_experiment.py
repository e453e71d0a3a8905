import json

import pytest

from atmguard.eventlog import read_jsonl
from atmguard.experiment import (
    CASES,
    CaseId,
    ReplicationResult,
    build_report,
    read_replications_csv,
    render_report,
    replication_seed,
    run_case,
    run_replication,
    simulate,
    write_replications_csv,
)
from atmguard.sim import mean_network_speed
from conftest import short_config


def fake(case, means):
    return [ReplicationResult(case, i, i, m, 0, 0) for i, m in enumerate(means)]


def test_seeds_shared_across_cases_and_distinct_across_reps():
    assert replication_seed(0, 3) == replication_seed(0, 3)
    assert len({replication_seed(0, k) for k in range(100)}) == 100
    assert replication_seed(1, 0) != replication_seed(0, 0)


@pytest.fixture(scope="module")
def traces():
    cfg = short_config()
    return {c: simulate(cfg, c, 0) for c in CASES}


def test_case_flags_in_logs(traces):
    base = traces[CaseId.BASELINE]
    assert not any(e["type"] in ("decision", "attack", "alert") for e in base.events)
    assert base.result.attacks == 0 and base.result.alerts == 0
    assert traces[CaseId.CASE1].result.attacks == 0
    assert not any(e["type"] == "alert" for e in traces[CaseId.CASE2].events)


def test_common_random_numbers(traces):
    def entries(trace):
        return [(e["vehicle"], e["arrival"]) for e in trace.events if e["type"] == "entry"]

    arrivals = {c: {v: a for v, a in entries(t)} for c, t in traces.items()}
    base = arrivals[CaseId.BASELINE]
    for c in CASES[1:]:
        shared = base.keys() & arrivals[c].keys()
        assert shared and all(base[v] == arrivals[c][v] for v in shared)


def test_mean_speed_recomputed_from_log(traces):
    for trace in traces.values():
        mph = [e["mph"] for e in trace.events if e["type"] == "network" and e["measured"]]
        assert mean_network_speed(mph) == trace.result.mean_speed


def test_conservation_at_end(traces):
    for t in traces.values():
        assert t.injected == t.exited + t.present + t.queued


def test_attack_log_records(traces):
    applied = [e for e in traces[CaseId.CASE2].events if e["type"] == "attack" and e["event"] == "applied"]
    for e in applied:
        assert e["point"] in ("A", "B") and "before" in e and "after" in e
        lo, hi = e["window"]
        assert lo <= e["t"] < hi + 1e-9


def test_override_invariant_on_trace(traces):
    trace = traces[CaseId.CASE3]
    mismatches = 0
    for rec in trace.intervals:
        for g, verdict in enumerate(rec.verdicts):
            if verdict.value == "Mismatch":
                mismatches += 1
                assert rec.displayed[g].states == rec.mon[g].states
    assert trace.result.alerts >= mismatches


def test_run_case_ordering_and_parallel_equivalence(tmp_path):
    cfg = short_config(run_s=60.0)
    serial = run_case(cfg, CaseId.CASE2, 2)
    parallel = run_case(cfg, CaseId.CASE2, 2, jobs=2)
    assert serial == parallel and [r.rep_index for r in serial] == [0, 1]
    with pytest.raises(ValueError):
        run_case(cfg, CaseId.CASE1, 1)


def test_event_log_written(tmp_path):
    cfg = short_config(run_s=60.0)
    r = run_replication(cfg, CaseId.CASE1, 0, log_dir=tmp_path)
    recs = read_jsonl(r.log_path)
    assert recs and all(list(x)[:2] == ["t", "type"] for x in recs)


def test_report_identical_inputs():
    results = {c: fake(c, [50.0, 52.0, 55.0]) for c in CASES}
    rep = build_report(results)
    for comp in rep.comparisons.values():
        assert comp.percent_change == 0.0 and comp.p == 1.0


def test_report_table_arithmetic():
    jitter = [-0.3, 0.1, 0.4, -0.2, 0.0, 0.2, -0.1, 0.3, -0.4, 0.1, 0.2, -0.3]
    means = {CaseId.BASELINE: 53, CaseId.CASE1: 60, CaseId.CASE2: 51, CaseId.CASE3: 59}
    results = {c: fake(c, [m + j * (k + 1) for k, j in enumerate(jitter)]) for c, m in means.items()}
    rep = build_report(results)
    assert round(rep.comparison("Case1", "Baseline").percent_change) == 13
    assert round(rep.comparison("Case2", "Case1").percent_change) == -15
    assert round(rep.comparison("Case3", "Case2").percent_change) == 16
    text = render_report(rep)
    assert "13% <0.01" in text and "-15% <0.01" in text and "16% <0.01" in text


def test_report_errors_and_warning():
    results = {c: fake(c, [50.0, 51.0]) for c in CASES[:3]}
    with pytest.raises(ValueError, match="missing"):
        build_report(results)
    results[CaseId.CASE3] = fake(CaseId.CASE3, [50.0, 51.0])
    assert build_report(results).warnings


def test_csv_round_trip(tmp_path):
    results = [r for c in CASES for r in fake(c, [50.123456789, 61.5, 49.75])]
    path = tmp_path / "replications.csv"
    write_replications_csv(path, results)
    grouped = read_replications_csv(path)
    assert [r for c in CASES for r in grouped[c]] == results
    assert build_report(grouped).to_dict() == build_report({c: fake(c, [50.123456789, 61.5, 49.75])
                                                             for c in CASES}).to_dict()
    json.dumps(build_report(grouped).to_dict(), allow_nan=False)


def test_table1_parallel_equals_serial():
    from atmguard.experiment import run_table1
    cfg = short_config(run_s=60.0)
    serial, rep1 = run_table1(cfg, n=2, jobs=1)
    parallel, rep2 = run_table1(cfg, n=2, jobs=3)
    assert serial == parallel and rep1.to_dict() == rep2.to_dict()
    assert [(r.case, r.rep_index) for r in serial] == [(c, k) for c in CASES for k in range(2)]


def test_point_b_attacks_neutralised_by_monitoring():
    cfg = short_config(attacks={"points": ["B"], "rate": 6.0})
    attacked = simulate(cfg, CaseId.CASE3, 1)
    clean = simulate(cfg, CaseId.CASE1, 1)
    assert attacked.result.attacks > 0
    for a, c in zip(attacked.intervals, clean.intervals):
        assert [d.states for d in a.displayed] == [d.states for d in c.displayed]
    assert attacked.result.mean_speed == clean.result.mean_speed


def test_channels_agree_without_attacks():
    cfg = short_config(attacks={"rate": 0.0})
    trace = simulate(cfg, CaseId.CASE3, 0)
    assert trace.result.alerts == 0
    assert all([d.states for d in r.atm] == [d.states for d in r.mon] for r in trace.intervals)
