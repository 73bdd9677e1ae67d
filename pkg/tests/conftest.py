import pytest

ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one acceptance verdict; the lines are printed in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number, title, verdict, detail=""):
        line = f"criterion {number} {title}: {verdict}" + (f" ({detail})" if detail else "")
        lines.append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
