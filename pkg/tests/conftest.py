from __future__ import annotations

import pytest

_CRITERIA: list[str] = []


class CriterionReport:
    """Collects one verdict line per acceptance criterion."""

    def __call__(self, number: int, title: str, passed: bool, measured: str, tolerance: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} [{number:>2}] {title}: {measured} (tolerance: {tolerance})"
        _CRITERIA.append(line)
        print(line)
        return passed


@pytest.fixture(scope="session")
def criterion() -> CriterionReport:
    return CriterionReport()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_CRITERIA, key=lambda s: int(s.split("[")[1].split("]")[0])):
        terminalreporter.write_line(line)
