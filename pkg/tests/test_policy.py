import json

import pytest

from atmguard.policy import (
    DecisionInput,
    GantryRole,
    PolicyTable,
    check_totality,
    decide_lane_states,
    gantry_role,
)
from atmguard.types import NO_EVENT, EventDescriptor, EventKind, LaneState, Source
from atmguard.verify import policy_report

O, M, C = LaneState.OPEN, LaneState.MERGE, LaneState.CLOSED


@pytest.fixture(scope="module")
def table():
    return PolicyTable.load()


def test_default_table_is_total(table):
    missing, unstable, count = policy_report(table)
    assert count == 108 and missing == [] and unstable == []


def test_no_event_all_open(table):
    d = decide_lane_states(DecisionInput(65.0, NO_EVENT), table, 0)
    assert d.states == (O, O, O) and d.source is Source.ATM


def test_incident_examples(table):
    ev = EventDescriptor(EventKind.INCIDENT, 1, 1.15)
    near = decide_lane_states(DecisionInput(25.0, ev, 0.15, 1), table, 1, role=GantryRole.NEAREST)
    far = decide_lane_states(DecisionInput(25.0, ev, 0.65, 1), table, 0, role=GantryRole.UPSTREAM)
    assert near.states == (O, C, O)
    assert far.states == (O, M, O)
    ev0 = EventDescriptor(EventKind.INCIDENT, 0, 1.15)
    low = decide_lane_states(DecisionInput(15.0, ev0, 0.15, 0), table, 1, role=GantryRole.NEAREST)
    assert low.states == (C, M, O)


def test_empty_lanes_read_as_free_flow(table):
    ev = EventDescriptor(EventKind.INCIDENT, 1, 1.25)
    d = decide_lane_states(DecisionInput(None, ev, 0.25, 1), table, 1, role=GantryRole.NEAREST)
    assert d.states == (O, M, O)


def test_gantry_roles():
    gp = (0.5, 1.0)
    assert gantry_role(1, gp, 1.25) is GantryRole.NEAREST
    assert gantry_role(0, gp, 1.25) is GantryRole.UPSTREAM
    assert gantry_role(1, gp, 0.75) is GantryRole.DOWNSTREAM
    assert gantry_role(0, gp, 0.75) is GantryRole.NEAREST


def test_missing_rule_is_named(table, tmp_path):
    data = table.to_dict()
    data["rules"] = [r for r in data["rules"] if r["when"] and r["when"] != {"role": "upstream", "lane": 2}]
    t = PolicyTable.from_dict(data)
    missing = check_totality(t)
    assert missing and all(k.get("lane") == 2 and k.get("role") == "upstream" for k in missing)
    path = tmp_path / "broken.json"
    path.write_text(json.dumps(data))
    from atmguard.verify import run_checks
    res = {r.name: r for r in run_checks(str(path), determinism=False)}
    assert not res["policy-totality"].ok and "upstream" in res["policy-totality"].detail


def test_schema_and_arity_rejected(table):
    data = table.to_dict()
    bad = json.loads(json.dumps(data))
    bad["rules"][0]["states"] = ["Open", "Open"]
    with pytest.raises(ValueError):
        PolicyTable.from_dict(bad)
    bad = json.loads(json.dumps(data))
    bad["rules"][0]["when"]["colour"] = "red"
    with pytest.raises(Exception):
        PolicyTable.from_dict(bad)


def test_round_trip(table):
    assert PolicyTable.from_dict(table.to_dict()) == table
