"""Shared pytest wiring.

The acceptance tests record one verdict line per criterion here; printing
them from the terminal-summary hook keeps them visible under output capture.
"""

acceptance_verdicts: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_verdicts:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_verdicts:
            terminalreporter.write_line(line)
