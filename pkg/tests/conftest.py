import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def report_criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion; returns the verdict."""
    lines = request.config.stash[_LINES]

    def report(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}  {title}: {detail}"
        lines.append((number, line))
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_LINES]
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
