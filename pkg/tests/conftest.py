"""Shared pytest hooks: collects and prints the acceptance scorecard."""

SCORECARD: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if SCORECARD:
        terminalreporter.section("acceptance scorecard")
        for line in SCORECARD:
            terminalreporter.write_line(line)
