import json

import pytest

from atmguard.cli import main
from atmguard.eventlog import atomic_write_text, read_jsonl, write_jsonl

QUICK = {"warmup_s": 30.0, "run_s": 60.0, "replications": 2}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(QUICK))
    return p


def test_run(tmp_path, cfg_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg_path), "--case", "Case2", "--out-dir", str(out)]) == 0
    assert (out / "replications.csv").read_text().count("\n") == 3
    assert len(list((out / "events").glob("*.jsonl"))) == 2
    assert json.loads((out / "config.json").read_text())["run_s"] == 60.0


def test_table1_and_report(tmp_path, cfg_path, capsys):
    out = tmp_path / "t1"
    assert main(["table1", "--config", str(cfg_path), "--no-events", "--out-dir", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "Baseline" in printed and "Case3" in printed
    first = (out / "report.json").read_text()
    assert main(["report", "--input", str(out / "replications.csv")]) == 0
    assert (out / "report.json").read_text() == first


def test_multiple_demands(tmp_path, cfg_path):
    out = tmp_path / "d"
    assert main(["table1", "--config", str(cfg_path), "--no-events", "--reps", "2", "--out-dir", str(out),
                 "--demand", "3000", "4000"]) == 0
    assert (out / "demand_3000" / "replications.csv").exists()
    assert (out / "demand_4000" / "replications.csv").exists()


def test_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"demand": 1}))
    assert main(["run", "--config", str(bad), "--case", "Case1"]) == 2
    assert "demand" in capsys.readouterr().err
    assert main(["run", "--case", "Case1", "--reps", "1", "--out-dir", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        main(["run", "--case", "Case9"])


def test_verify_missing_rule(tmp_path, capsys):
    from atmguard.policy import PolicyTable
    data = PolicyTable.load().to_dict()
    data["rules"] = [r for r in data["rules"] if r["when"] != {"event": "None"} and r["when"]]
    p = tmp_path / "policy.json"
    p.write_text(json.dumps(data))
    assert main(["verify", "--policy", str(p)]) == 1
    out = capsys.readouterr().out
    assert "[FAIL] policy-totality" in out and "no rule" in out


def test_atomic_write_and_jsonl(tmp_path):
    p = tmp_path / "a" / "b.txt"
    atomic_write_text(p, "hello\n")
    assert p.read_text() == "hello\n" and list(p.parent.iterdir()) == [p]
    write_jsonl(tmp_path / "e.jsonl", [{"t": 0.0, "type": "x"}])
    assert read_jsonl(tmp_path / "e.jsonl") == [{"t": 0.0, "type": "x"}]
