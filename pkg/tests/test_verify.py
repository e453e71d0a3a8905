import numpy as np

from atmguard import verify
from atmguard.verify import detection_grid_disagreements, run_checks


def test_pristine_build_passes():
    results = run_checks()
    assert [r.name for r in results] == ["detection-grid", "detection-api", "policy-totality", "t-test",
                                         "determinism"]
    assert all(r.ok for r in results), [r for r in results if not r.ok]


def test_grid_oracle_catches_a_wrong_threshold(monkeypatch):
    # the oracle must be able to disagree: evaluate the kernel with a different C2
    real = verify.incident_flags
    monkeypatch.setattr(verify, "incident_flags", lambda *a: real(*a[:4], a[4], 0.2))
    bad, total = detection_grid_disagreements()
    assert bad > 0 and total == 16 ** 6


def test_tampered_seeding_fails_determinism(monkeypatch):
    from atmguard import experiment
    counter = iter(range(10 ** 6))
    monkeypatch.setattr(experiment, "replication_seed", lambda m, k: next(counter))
    res = {r.name: r for r in run_checks()}
    assert not res["determinism"].ok
