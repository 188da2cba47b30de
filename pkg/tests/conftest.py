import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# small enough to train in a second or two, large enough to exercise every stage
TINY_SAC = {"total_steps": 600, "warmup_steps": 200, "eval_interval": 300, "eval_episodes": 1,
            "batch_size": 32, "hidden": [16, 16]}


@pytest.fixture
def tiny_sac():
    return dict(TINY_SAC)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
