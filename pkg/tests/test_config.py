import json

import pytest

from atmguard.config import ConfigError, ScenarioConfig, load_config, parse_config


def test_defaults():
    cfg = load_config(None)
    assert cfg.demand_vph == 4500 and cfg.replications == 55
    assert (cfg.warmup_s, cfg.run_s, cfg.dt_s, cfg.collection_interval_s) == (120, 600, 0.5, 10)
    assert cfg.steps_per_interval == 20 and cfg.horizon_s == 720
    assert cfg.attacks.points == ("A", "B") and cfg.attacks.rate == 3


def test_round_trip(tmp_path):
    cfg = parse_config({"demand_vph": 3000, "attacks": {"points": ["A", "C"]}, "driver": {"compliance": 0.9}})
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert load_config(path) == cfg


@pytest.mark.parametrize("data,fragment", [
    ({"demnd_vph": 1}, "demnd_vph"),
    ({"demand_vph": 0}, "demand_vph"),
    ({"dt_s": 0.3}, "multiple"),
    ({"detector": {"c1": 1.5}}, "detector.c1"),
    ({"attacks": {"duration_s": [50, 10]}}, "duration_s"),
    ({"incident": {"lane": 3}}, "lane"),
    ({"geometry": {"gantry_positions_mi": [0.5, 2.0]}}, "inside the segment"),
])
def test_rejections(data, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(data)


def test_bad_files(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)
    p.write_text(json.dumps([1, 2]))
    with pytest.raises(ConfigError, match="object"):
        load_config(p)
    p.write_text("")
    assert load_config(p) == ScenarioConfig()


def test_build_maps_fields():
    cfg = parse_config({"driver": {"time_headway_s": 1.5, "incident_sight_m": 80}, "detector": {"debounce": 3}})
    d, c = cfg.driver.build()
    assert d.time_headway == 1.5 and c.incident_sight_m == 80
    assert cfg.detector.build().debounce == 3


def test_workers_default_to_cpu_count():
    import os
    assert ScenarioConfig().jobs is None and ScenarioConfig().workers == (os.cpu_count() or 1)
    assert parse_config({"jobs": 3}).workers == 3
    with pytest.raises(ConfigError):
        parse_config({"jobs": 0})
