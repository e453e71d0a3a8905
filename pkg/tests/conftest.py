import pytest

from atmguard.config import ScenarioConfig


def short_config(**overrides) -> ScenarioConfig:
    """Four simulated minutes with the incident early enough to matter."""
    data = {"warmup_s": 60.0, "run_s": 180.0, "incident": {"start_after_warmup_s": 20.0},
            "replications": 2}
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key] = {**data[key], **value}
        else:
            data[key] = value
    return ScenarioConfig.model_validate(data)


@pytest.fixture
def short():
    return short_config


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
