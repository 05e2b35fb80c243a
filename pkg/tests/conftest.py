import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# acceptance outcomes, filled by test_acceptance.py and echoed in the summary
ACCEPTANCE = {}
_PARTS = {}


def record_criterion(number: int, passed: bool, detail: str, part=None) -> str:
    """Record one PASS/FAIL line; criteria checked in several parts share a line."""
    if part is not None:
        _PARTS.setdefault(number, {})[part] = (passed, detail)
        parts = _PARTS[number]
        passed = all(p for p, _ in parts.values())
        detail = "; ".join(d for _, d in parts.values())
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return line


@pytest.fixture
def criterion():
    return record_criterion


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
