import numpy as np
import pytest

from atmguard.demand import spawn_demand


def test_poisson_volume_over_seeds():
    counts = [len(spawn_demand(4500, np.random.default_rng(s), 600.0)) for s in range(20)]
    assert np.mean(counts) == pytest.approx(750, rel=0.05)


def test_deterministic_headway():
    arr = spawn_demand(3600, np.random.default_rng(0), 10.0, deterministic=True)
    assert np.allclose(arr.times, np.arange(10.0))


def test_attributes_and_penetration():
    arr = spawn_demand(4500, np.random.default_rng(4), 3600.0, cv_penetration=0.5, compliance=0.8)
    assert np.all(np.diff(arr.times) >= 0) and np.all((arr.times >= 0) & (arr.times < 3600))
    assert arr.is_cv.mean() == pytest.approx(0.5, abs=0.03)
    assert arr.compliant.mean() == pytest.approx(0.8, abs=0.03)
    mph = arr.desired_ms / 0.44704
    assert mph.min() >= 67 and mph.max() <= 73


def test_zero_and_negative_flow():
    assert len(spawn_demand(0, np.random.default_rng(0), 100.0)) == 0
    with pytest.raises(ValueError):
        spawn_demand(-1, np.random.default_rng(0), 100.0)
