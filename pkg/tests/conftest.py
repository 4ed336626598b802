# Acceptance tests append their per-criterion pass/fail lines here so the
# summary survives output capture and shows once at the end of the run.
criterion_lines: list = []


def pytest_terminal_summary(terminalreporter):
    if criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in criterion_lines:
            terminalreporter.write_line(line)
