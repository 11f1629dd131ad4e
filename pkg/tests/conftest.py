"""Shared pytest plumbing for the suite.

The acceptance tests append one-line summaries (tolerances, measured
factors) to ``acceptance_lines``; printing them from the terminal-summary
hook keeps them visible even though pytest captures in-test stdout.
"""

acceptance_lines: list = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance summary")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
